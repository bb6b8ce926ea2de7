//! Generates a small synthetic dataset, writes it to disk, loads it back
//! through the manifest and checks the language geometry.

use sgear::dataio::synth::{generate_synthetic_dataset, successor_graph, SynthConfig};
use sgear::dataio::{read_prototype_file, Dataset};
use sgear::diff::cosine;

fn main() -> sgear::Result<()> {
    let k = 8;
    let mut cfg = SynthConfig::new(k, 4, 8, 20, successor_graph(k, 2, 0.9), 5);
    cfg.tokens = 3;
    let synth = generate_synthetic_dataset(&cfg)?;

    let dir = tempfile::tempdir()?;
    let manifest = synth.write(dir.path())?;
    let data = Dataset::from_manifest(&manifest)?;
    let clip = &data.clips[0];
    println!(
        "{} clips, {} classes, fps {}, tau_o {}, tau_a {}",
        data.len(),
        data.num_classes,
        data.fps,
        data.tau_o,
        data.tau_a
    );
    println!(
        "clip {}: frame labels {:?} -> target {}",
        clip.id, clip.frame_labels, clip.target
    );
    println!("action sequence {:?}", synth.sequences[0]);

    let lang = read_prototype_file(dir.path().join("language.sglp"))?.to_tensor();
    let (mut within, mut across, mut nw, mut na) = (0.0, 0.0, 0, 0);
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let c = cosine(lang.row(i), lang.row(j));
            if (i < k / 2) == (j < k / 2) {
                within += c;
                nw += 1;
            } else {
                across += c;
                na += 1;
            }
        }
    }
    println!(
        "language cosine: within block {:.3}, across blocks {:.3}",
        within / nw as f64,
        across / na as f64
    );
    Ok(())
}
