use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgear::dataio::files::{decode_features, decode_prototypes, encode_features, encode_prototypes};
use sgear::dataio::synth::{block_graph, sample_chain, uniform_graph};
use sgear::dataio::{
    generate_synthetic_dataset, read_feature_file, read_prototype_file, sample_observation_window, write_feature_file,
    write_prototype_file, ClipInput, Dataset, DatasetManifest, FeatureArray, PrototypeArray, SynthConfig,
};
use sgear::diff::cosine;
use sgear::Error;

fn features(frames: usize, tokens: usize, dim: usize) -> FeatureArray {
    let n = frames * tokens * dim;
    FeatureArray::new(frames, tokens, dim, (0..n).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap()
}

#[test]
fn feature_file_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.sgft");
    let f = features(3, 2, 5);
    write_feature_file(&path, &f).unwrap();
    let back = read_feature_file(&path).unwrap();
    assert_eq!(back, f);
    let a: Vec<u32> = f.values.iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = back.values.iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(&path).unwrap(), encode_features(&back).unwrap());
}

#[test]
fn prototype_file_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lang.sglp");
    let p = PrototypeArray {
        classes: 4,
        dim: 3,
        values: (0..12).map(|i| i as f32 / 7.0 - 0.5).collect(),
    };
    write_prototype_file(&path, &p).unwrap();
    assert_eq!(read_prototype_file(&path).unwrap(), p);
    assert_eq!(decode_prototypes(&encode_prototypes(&p).unwrap()).unwrap(), p);
}

#[test]
fn truncated_feature_payload_is_a_format_error() {
    // header claims 2·2·2 floats, payload holds 7
    let mut buf = encode_features(&features(2, 2, 2)).unwrap();
    buf.truncate(buf.len() - 4);
    match decode_features(&buf) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, buf.len()),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn bad_magic_is_rejected() {
    let mut buf = encode_prototypes(&PrototypeArray {
        classes: 1,
        dim: 1,
        values: vec![1.0],
    })
    .unwrap();
    buf[0] = b'X';
    assert!(matches!(decode_prototypes(&buf), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(decode_features(&buf), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn observation_windows() {
    let w = sample_observation_window(20.0, 10.0, 1.0, 1.0);
    assert_eq!(w, (9..=18).map(f64::from).collect::<Vec<_>>());
    let w = sample_observation_window(5.0, 2.0, 0.5, 2.0);
    for (got, want) in w.iter().zip([2.5, 3.0, 3.5, 4.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(w.len(), 4);
}

#[test]
fn uniform_chain_visits_classes_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let chain = sample_chain(&uniform_graph(4), 0, 10_000, &mut rng);
    let mut counts = [0usize; 4];
    for c in chain {
        counts[c] += 1;
    }
    for c in counts {
        let freq = c as f64 / 10_000.0;
        assert!((freq - 0.25).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn two_block_language_geometry() {
    let k = 8;
    let cfg = SynthConfig::new(k, 4, 8, 20, block_graph(k, 2, 0.9), 5);
    let synth = generate_synthetic_dataset(&cfg).unwrap();
    let lang = synth.language.to_tensor();
    let block = |c: usize| c * 2 / k;
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for i in 0..k {
        for j in i + 1..k {
            let c = cosine(lang.row(i), lang.row(j));
            if block(i) == block(j) {
                within.push(c);
            } else {
                across.push(c);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&within) > mean(&across) + 0.1,
        "{} vs {}",
        mean(&within),
        mean(&across)
    );
}

#[test]
fn synthetic_generation_is_deterministic() {
    let cfg = SynthConfig::new(6, 4, 8, 30, block_graph(6, 2, 0.8), 9);
    let a = generate_synthetic_dataset(&cfg).unwrap();
    let b = generate_synthetic_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 10;
    assert_ne!(generate_synthetic_dataset(&other).unwrap().features, a.features);
}

#[test]
fn written_dataset_loads_like_in_memory_one() {
    let mut cfg = SynthConfig::new(5, 3, 4, 12, uniform_graph(5), 2);
    cfg.tokens = 3;
    let synth = generate_synthetic_dataset(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = synth.write(dir.path()).unwrap();

    let disk = Dataset::from_manifest(&manifest_path).unwrap();
    let mem = Dataset::from_synthetic(&synth, cfg.tau_a).unwrap();
    assert_eq!(disk.clips.len(), 12);
    for (a, b) in disk.clips.iter().zip(&mem.clips) {
        assert_eq!(a.target, b.target);
        assert_eq!(a.frame_labels, b.frame_labels);
        let (ClipInput::Tokens(x), ClipInput::Tokens(y)) = (&a.input, &b.input) else {
            panic!("token clips expected");
        };
        assert_eq!(x.shape(), &[3, 3, 4]);
        assert_eq!(x, y);
    }

    let manifest = DatasetManifest::read(&manifest_path).unwrap();
    assert_eq!(
        DatasetManifest::from_text(&manifest.to_text().unwrap()).unwrap(),
        manifest
    );
}

#[test]
fn split_partitions_clips() {
    let synth = generate_synthetic_dataset(&SynthConfig::new(4, 2, 4, 50, uniform_graph(4), 1)).unwrap();
    let data = Dataset::from_synthetic(&synth, 1.0).unwrap();
    let (a, b) = data.split(0.8, 3);
    assert_eq!(a.len(), 40);
    assert_eq!(b.len(), 10);
    let mut ids: Vec<&str> = a.clips.iter().chain(&b.clips).map(|c| c.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 50);
    assert_eq!(data.split(0.8, 3), (a, b));
}
