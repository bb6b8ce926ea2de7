//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgear::dataio::files::{encode_features, encode_prototypes};
use sgear::dataio::synth::successor_graph;
use sgear::dataio::{
    generate_synthetic_dataset, read_feature_file, read_prototype_file, write_feature_file, write_prototype_file, Clip,
    ClipInput, Dataset, FeatureArray, PrototypeArray, SynthConfig,
};
use sgear::decoder::{Decoder, DecoderConfig};
use sgear::diff::{grad_check, grad_check_params, ParamStore, Tape, Tensor, Var, DEFAULT_EPS};
use sgear::encoder::{EncoderConfig, TokenSeq};
use sgear::eval::{
    class_mean_top5_recall, evaluate, fusion_preset, predict_dataset, prototype_ratio_sweep, topk_accuracy,
    PredictionRecord, PredictionSet,
};
use sgear::model::{Model, ModelConfig, Toggles};
use sgear::pa::build_toeplitz;
use sgear::semantic::{
    alignment_score, loss_feat, loss_reg, loss_sem, random_prototypes, FeatNorm, LanguageTargets, LossWeights,
    PrototypeSubset,
};
use sgear::tca::Tca;
use sgear::trainer::{lr_at, make_preset, Checkpoint, Trainer};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e(err: impl std::fmt::Debug) -> String {
    format!("{err:?}")
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let y = Tensor::randn(&[4, 3], 1.0, &mut rng);
    let ops: Vec<(&str, f64)> = vec![
        (
            "matmul",
            grad_check(
                &[x.clone(), y.clone()],
                |t, v| {
                    let m = t.matmul(v[0], v[1])?;
                    let m = t.mul(m, m)?;
                    t.sum(m)
                },
                DEFAULT_EPS,
            )
            .map_err(e)?,
        ),
        (
            "softmax+ce",
            grad_check(
                &[x.clone()],
                |t, v| {
                    let s = t.softmax_rows(v[0])?;
                    t.cross_entropy(s, 2)
                },
                DEFAULT_EPS,
            )
            .map_err(e)?,
        ),
        (
            "layer_norm",
            grad_check(
                &[
                    x.clone(),
                    Tensor::vector(vec![1.0, 0.5, -0.7, 2.0]),
                    Tensor::vector(vec![0.1, 0.0, 0.3, -0.2]),
                ],
                |t, v| {
                    let n = t.layer_norm(v[0], v[1], v[2])?;
                    let w = t.constant(Tensor::randn(&[3, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
                    let p = t.mul(n, w)?;
                    t.sum(p)
                },
                DEFAULT_EPS,
            )
            .map_err(e)?,
        ),
        (
            "cosine_rows",
            grad_check(
                &[x.clone(), y.clone()],
                |t, v| {
                    let b = t.transpose(v[1])?;
                    let c = t.cosine_rows(v[0], b)?;
                    let c = t.mul(c, c)?;
                    t.sum(c)
                },
                DEFAULT_EPS,
            )
            .map_err(e)?,
        ),
        (
            "gelu",
            grad_check(
                &[x.clone()],
                |t, v| {
                    let g = t.gelu(v[0])?;
                    t.sum(g)
                },
                DEFAULT_EPS,
            )
            .map_err(e)?,
        ),
    ];
    for (name, err) in &ops {
        ensure(*err < 1e-6, format!("{name}: relative error {err:.2e}"))?;
    }
    let worst_op = ops.iter().map(|o| o.1).fold(0.0, f64::max);

    let (k, frames, d) = (6, 3, 16);
    let mut mc = ModelConfig::desk(k, frames, 5, d);
    mc.encoder = EncoderConfig::VitLite {
        patch_size: 4,
        depth: 1,
        heads: 2,
        input_size: (8, 8),
        channels: 3,
    };
    mc.tca_blocks = 1;
    mc.decoder.layers = 1;
    mc.decoder.mlp_hidden = 16;
    let model = Model::new(mc, Some(random_prototypes(k, d, 3))).map_err(e)?;
    let clip = Clip {
        id: "probe".into(),
        input: ClipInput::Frames(Tensor::randn(&[frames, 8, 8, 3], 1.0, &mut rng)),
        frame_labels: vec![Some(1), Some(4), Some(2)],
        target: 5,
    };
    // hold the top-k prototype selection fixed at the probe point
    let mut tape = Tape::new();
    let p = tape.bind(&model.params);
    let selection = model.forward(&mut tape, &p, &clip, None).map_err(e)?.selection;
    let w = LossWeights::new(1.0, 1.0, 1.0, 1.0, 1.0);
    let report = grad_check_params(
        &model.params,
        |tape, p| Ok(model.clip_loss(tape, p, &clip, &w, selection.as_deref())?.0),
        DEFAULT_EPS,
    )
    .map_err(e)?;
    ensure(report.max_rel_error < 1e-4, format!("full loss: {report:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "full loss {:.2e} over {} coordinates, ops {worst_op:.2e}, {}",
        report.max_rel_error,
        report.coordinates,
        secs(elapsed)
    ))
}

fn detach_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (k, d) = (5, 4);
    let targets = LanguageTargets::new(&random_prototypes(k, d, 8));
    let z0 = Tensor::randn(&[3, d], 1.0, &mut rng);
    let p0 = Tensor::randn(&[k, d], 1.0, &mut rng);
    let zero = |g: Option<&[f64]>| g.is_none_or(|g| g.iter().all(|v| *v == 0.0));
    let live = |g: Option<&[f64]>| g.is_some_and(|g| g.iter().any(|v| *v != 0.0));

    let mut tape = Tape::new();
    let (z, p) = (tape.leaf(z0.clone(), true), tape.leaf(p0.clone(), true));
    let l = loss_sem(&mut tape, z, p, &[0, 2, 4], &targets, &PrototypeSubset::full(k)).map_err(e)?;
    let g = tape.backward(l).map_err(e)?;
    ensure(zero(g.get(z)) && live(g.get(p)), "semantic loss")?;

    let mut tape = Tape::new();
    let (z, p) = (tape.leaf(z0.clone(), true), tape.leaf(p0, true));
    let l = loss_reg(&mut tape, z, p, &[0, 2, 4]).map_err(e)?;
    let g = tape.backward(l).map_err(e)?;
    ensure(live(g.get(z)) && zero(g.get(p)), "regularization loss")?;

    let mut tape = Tape::new();
    let z = tape.leaf(z0, true);
    let i_hat = tape.leaf(Tensor::randn(&[3, d], 1.0, &mut rng), true);
    let l = loss_feat(&mut tape, z, i_hat, FeatNorm::Mse)
        .map_err(e)?
        .ok_or("no feature loss")?;
    let g = tape.backward(l).map_err(e)?;
    ensure(live(g.get(z)) && zero(g.get(i_hat)), "feature loss")?;
    Ok("sem/z, reg/prototypes and feat/targets gradients are exactly zero".into())
}

fn causality() -> Outcome {
    let mut worst: f64 = 0.0;
    for frames in [2, 5, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(frames as u64);
        let (tokens, d) = (3, 8);

        let mut store = ParamStore::new();
        let tca = Tca::new(&mut store, d, 2, frames, 2, &mut rng).map_err(e)?;
        let run_tca = |x: &Tensor| -> Result<Tensor, String> {
            let mut tape = Tape::new();
            let p = tape.bind(&store);
            let seq = TokenSeq {
                x: tape.constant(x.clone()),
                frames,
                tokens,
            };
            let out = tca.forward(&mut tape, &p, seq).map_err(e)?;
            Ok(tape.value(out.x).clone())
        };

        let mut dstore = ParamStore::new();
        let cfg = DecoderConfig {
            layers: 2,
            heads: 2,
            mlp_hidden: 16,
            max_rollout: 2,
        };
        let dec = Decoder::new(&mut dstore, &cfg, d, frames, &mut rng).map_err(e)?;
        let run_dec = |x: &Tensor| -> Result<Tensor, String> {
            let mut tape = Tape::new();
            let p = tape.bind(&dstore);
            let xv: Var = tape.constant(x.clone());
            let out = dec.decode(&mut tape, &p, xv).map_err(e)?;
            Ok(tape.value(out).clone())
        };

        let x = Tensor::randn(&[frames * tokens, d], 1.0, &mut rng);
        let h = Tensor::randn(&[frames, d], 1.0, &mut rng);
        let (base_tca, base_dec) = (run_tca(&x)?, run_dec(&h)?);
        for t in 0..frames.saturating_sub(1) {
            // perturb every input after step t
            let mut y = x.clone();
            for v in &mut y.data_mut()[(t + 1) * tokens * d..] {
                *v += rng.random_range(-3.0..3.0);
            }
            let mut g = h.clone();
            for v in &mut g.data_mut()[(t + 1) * d..] {
                *v += rng.random_range(-3.0..3.0);
            }
            let (out_tca, out_dec) = (run_tca(&y)?, run_dec(&g)?);
            for row in 0..(t + 1) * tokens {
                for (a, b) in out_tca.row(row).iter().zip(base_tca.row(row)) {
                    worst = worst.max((a - b).abs());
                }
            }
            for row in 0..=t {
                for (a, b) in out_dec.row(row).iter().zip(base_dec.row(row)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    ensure(worst < 1e-9, format!("max change {worst:.2e}"))?;
    Ok(format!("T in {{2, 5, 8}}, max change at earlier steps {worst:.1e}"))
}

fn toeplitz_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for frames in [2, 3, 6] {
        let mut store = ParamStore::new();
        let pa = sgear::pa::PaBlock::new(&mut store, 8, frames, 1, sgear::pa::PaScale::D, &mut rng).map_err(e)?;
        let n = store.get(pa.toe).value.len();
        ensure(n == 2 * frames - 1, format!("T={frames}: {n} parameters"))?;
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::randn(&[n], 1.0, &mut rng));
        let m = build_toeplitz(&mut tape, w, frames, frames).map_err(e)?;
        let m = tape.value(m);
        for i in 1..frames {
            for j in 1..frames {
                ensure(
                    m.at(i, j) == m.at(i - 1, j - 1),
                    format!("T={frames}: diagonal ({i},{j})"),
                )?;
            }
        }
    }
    let w: Vec<f64> = (0..5).map(|i| i as f64 + 0.5).collect();
    let mut tape = Tape::new();
    let wv = tape.constant(Tensor::vector(w.clone()));
    let m = build_toeplitz(&mut tape, wv, 3, 3).map_err(e)?;
    let want =
        Tensor::from_rows(&[vec![w[0], w[1], w[2]], vec![w[3], w[0], w[1]], vec![w[4], w[3], w[0]]]).map_err(e)?;
    ensure(tape.value(m) == &want, "T=3 layout")?;
    Ok("2T-1 parameters, constant diagonals, T=3 layout [[w0,w1,w2],[w3,w0,w1],[w4,w3,w0]]".into())
}

fn semantic_transfer() -> Outcome {
    let start = Instant::now();
    let (k, frames, dim) = (12, 4, 16);
    let mut sc = SynthConfig::new(k, frames, dim, 200, successor_graph(k, 2, 0.9), 3);
    sc.tokens = 5;
    let synth = generate_synthetic_dataset(&sc).map_err(e)?;
    let data = Dataset::from_synthetic(&synth, sc.tau_a).map_err(e)?;
    let language = synth.language.to_tensor();

    let mut tc = make_preset("desk").map_err(e)?;
    tc.loss_weights = LossWeights::new(1.0, 1.0, 0.0, 0.0, 0.0);
    let mut t = Trainer::new(
        ModelConfig::desk(k, frames, sc.tokens, dim),
        tc.clone(),
        Some(language.clone()),
    )
    .map_err(e)?;
    let score = |t: &Trainer| alignment_score(t.model.visual_prototypes().unwrap(), &language).map_err(e);
    let initial = score(&t)?;
    ensure(initial.abs() < 0.3, format!("initial alignment {initial:.3}"))?;
    let steps = 2000;
    let mut reached = None;
    for step in 0..steps {
        let batch: Vec<&Clip> = (0..tc.batch_size)
            .map(|i| &data.clips[(step * tc.batch_size + i) % data.len()])
            .collect();
        t.train_step(&batch, lr_at(step, 50, steps, tc.lr)).map_err(e)?;
        if (step + 1) % 50 == 0 && score(&t)? >= 0.6 {
            reached = Some(step + 1);
            break;
        }
    }
    let last = score(&t)?;
    let elapsed = start.elapsed();
    let steps_taken = reached.ok_or(format!("alignment {last:.3} after {steps} steps"))?;
    ensure(elapsed < Duration::from_secs(180), format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "alignment {initial:+.3} -> {last:.3} at step {steps_taken}, {}",
        secs(elapsed)
    ))
}

fn anticipation_sanity() -> Outcome {
    let start = Instant::now();
    let (k, frames, dim) = (12, 8, 16);
    let mut sc = SynthConfig::new(k, frames, dim, 300, successor_graph(k, 2, 0.99), 7);
    sc.tokens = 5;
    let synth = generate_synthetic_dataset(&sc).map_err(e)?;
    let data = Dataset::from_synthetic(&synth, sc.tau_a).map_err(e)?;
    let (train, held) = data.split(0.8, 1);
    let run = |setting: &str| -> Result<(f64, f64), String> {
        let mut tc = make_preset("desk").map_err(e)?;
        tc.toggles = Toggles::setting(setting).map_err(e)?;
        tc.seed = 1;
        let mut t = Trainer::new(
            ModelConfig::desk(k, frames, sc.tokens, dim),
            tc,
            Some(synth.language.to_tensor()),
        )
        .map_err(e)?;
        t.fit(&train, |_| {}).map_err(e)?;
        Ok((
            evaluate(&t.model, &train).map_err(e)?.top1,
            evaluate(&t.model, &held).map_err(e)?.top1,
        ))
    };
    let (full_train, full_held) = run("full")?;
    let (_, base_held) = run("1")?;
    let elapsed = start.elapsed();
    ensure(full_train >= 0.95, format!("train top-1 {full_train:.3}"))?;
    ensure(elapsed < Duration::from_secs(600), format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "train top-1 {full_train:.3}; held-out top-1 {full_held:.3} vs baseline {base_held:.3}, {}",
        secs(elapsed)
    ))
}

fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    for _ in 0..scores.len() {
        let mut best: Option<usize> = None;
        for j in 0..scores.len() {
            if order.contains(&j) {
                continue;
            }
            if best.is_none_or(|b| scores[j] > scores[b]) {
                best = Some(j);
            }
        }
        order.push(best.unwrap());
    }
    order
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let k = rng.random_range(5..15);
        let records: Vec<PredictionRecord> = (0..rng.random_range(10..60))
            .map(|i| {
                let raw: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(0..5u8)) + 0.5).collect();
                let s: f64 = raw.iter().sum();
                PredictionRecord::new(
                    format!("c{i}"),
                    raw.iter().map(|v| v / s).collect(),
                    rng.random_range(0..k),
                )
            })
            .collect();
        let set = PredictionSet { records };
        let ranks: Vec<Vec<usize>> = set.records.iter().map(|r| ranking(&r.scores)).collect();
        let hit = |i: usize, n: usize| ranks[i][..n].contains(&set.records[i].target);
        for n in [1, 5] {
            let want = (0..set.records.len()).filter(|&i| hit(i, n)).count() as f64 / set.records.len() as f64;
            ensure(topk_accuracy(&set, n).map_err(e)? == want, format!("top-{n}"))?;
        }
        let mut recalls = Vec::new();
        for c in 0..k {
            let of: Vec<usize> = (0..set.records.len()).filter(|&i| set.records[i].target == c).collect();
            if !of.is_empty() {
                recalls.push(of.iter().filter(|&&i| hit(i, 5)).count() as f64 / of.len() as f64);
            }
        }
        let want = recalls.iter().sum::<f64>() / recalls.len() as f64;
        ensure(
            class_mean_top5_recall(&set).map_err(e)? == want,
            "class-mean top-5 recall",
        )?;
    }
    Ok("100 randomized sets, exact equality".into())
}

fn configuration_fidelity() -> Outcome {
    let ek100 = make_preset("ek100").map_err(e)?;
    ensure(
        ek100.loss_weights == LossWeights::new(4.0, 1.0, 1.0, 1.0, 1.0),
        "ek100 loss weights",
    )?;
    ensure(
        (ek100.lr, ek100.momentum, ek100.weight_decay, ek100.batch_size) == (1e-4, 0.9, 1e-5, 3),
        "ek100 optimizer",
    )?;
    let s50 = make_preset("50s").map_err(e)?;
    ensure(
        s50.loss_weights == LossWeights::new(1.0, 0.1, 1.0, 0.1, 1.0),
        "50s loss weights",
    )?;
    ensure(
        (s50.lr, s50.weight_decay, s50.epochs) == (5e-6, 1e-4, 100),
        "50s optimizer",
    )?;
    let eg = make_preset("eg").map_err(e)?;
    ensure(
        eg.loss_weights == LossWeights::new(2.0, 1.0, 1.0, 0.1, 1.0),
        "eg loss weights",
    )?;
    let fusion: Vec<f64> = fusion_preset("ek100").map_err(e)?.iter().map(|(_, w)| *w).collect();
    ensure(fusion == vec![2.5, 1.5, 1.0, 1.0, 0.5], "ek100 ensemble weights")?;
    let fusion: Vec<f64> = fusion_preset("ek55").map_err(e)?.iter().map(|(_, w)| *w).collect();
    ensure(fusion == vec![1.5, 1.5, 1.5, 1.0, 1.0], "ek55 ensemble weights")?;
    Ok("ek100, ek55, eg and 50s presets and ensemble weights".into())
}

fn subset_inference() -> Outcome {
    let (k, frames, tokens, d) = (4053, 2, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clips = (0..6)
        .map(|i| Clip {
            id: format!("c{i}"),
            input: ClipInput::Tokens(Tensor::randn(&[frames, tokens, d], 1.0, &mut rng)),
            frame_labels: vec![Some(i), Some(i + 1)],
            target: rng.random_range(0..k),
        })
        .collect();
    let data = Dataset {
        num_classes: k,
        class_names: (0..k).map(|c| format!("a{c}")).collect(),
        fps: 1.0,
        tau_o: 2.0,
        tau_a: 1.0,
        clips,
    };
    let mut mc = ModelConfig::desk(k, frames, tokens, d);
    mc.tca_blocks = 1;
    mc.decoder.layers = 1;
    let model = Model::new(mc, Some(random_prototypes(k, d, 5))).map_err(e)?;

    let mut reduced = model.clone();
    reduced.set_subset_ratio(0.1, 1).map_err(e)?;
    ensure(
        reduced.comparisons() == 406,
        format!("{} comparisons", reduced.comparisons()),
    )?;
    let preds = predict_dataset(&reduced, &data, 0).map_err(e)?;
    preds.validate().map_err(e)?;

    let rows = prototype_ratio_sweep(&model, &data, &[1.0], 1).map_err(e)?;
    let mut same = model.clone();
    same.set_subset_ratio(1.0, 1).map_err(e)?;
    ensure(
        predict_dataset(&same, &data, 0).map_err(e)? == predict_dataset(&model, &data, 0).map_err(e)?,
        "ratio 1.0 predictions",
    )?;
    let plain = evaluate(&model, &data).map_err(e)?;
    ensure(
        (rows[0].top1, rows[0].top5, rows[0].comparisons) == (plain.top1, plain.top5, k),
        "ratio 1.0 metrics",
    )?;
    Ok("406 of 4053 comparisons, normalized predictions; ratio 1.0 identical".into())
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let values: Vec<f32> = (0..2 * 3 * 4).map(|_| rng.random::<f32>() - 0.5).collect();
    let f = FeatureArray::new(2, 3, 4, values).map_err(e)?;
    let fp = dir.path().join("f.sgft");
    write_feature_file(&fp, &f).map_err(e)?;
    let back = read_feature_file(&fp).map_err(e)?;
    ensure(
        encode_features(&back).map_err(e)? == std::fs::read(&fp).map_err(e)?,
        "feature file bytes",
    )?;
    ensure(
        back.values
            .iter()
            .zip(&f.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "feature values",
    )?;

    let proto = PrototypeArray {
        classes: 3,
        dim: 5,
        values: (0..15).map(|_| rng.random::<f32>()).collect(),
    };
    let pp = dir.path().join("p.sglp");
    write_prototype_file(&pp, &proto).map_err(e)?;
    let back = read_prototype_file(&pp).map_err(e)?;
    ensure(
        encode_prototypes(&back).map_err(e)? == std::fs::read(&pp).map_err(e)?,
        "prototype file bytes",
    )?;
    ensure(back == proto, "prototype values")?;

    let (k, frames, dim) = (5, 3, 8);
    let mut sc = SynthConfig::new(k, frames, dim, 24, successor_graph(k, 1, 0.9), 6);
    sc.tokens = 3;
    let synth = generate_synthetic_dataset(&sc).map_err(e)?;
    let data = Dataset::from_synthetic(&synth, sc.tau_a).map_err(e)?;
    let train = || -> Result<Trainer, String> {
        let mut mc = ModelConfig::desk(k, frames, 3, dim);
        mc.tca_blocks = 1;
        mc.decoder.layers = 1;
        let mut tc = make_preset("desk").map_err(e)?;
        tc.epochs = 2;
        tc.warmup_epochs = 1;
        let mut t = Trainer::new(mc, tc, Some(synth.language.to_tensor())).map_err(e)?;
        t.fit(&data, |_| {}).map_err(e)?;
        Ok(t)
    };
    let (a, b) = (train()?, train()?);
    let (ba, bb) = (
        Checkpoint::from_trainer(&a).to_bytes().map_err(e)?,
        Checkpoint::from_trainer(&b).to_bytes().map_err(e)?,
    );
    ensure(ba == bb, "seeded runs differ")?;

    let cp = dir.path().join("m.ckpt");
    Checkpoint::from_trainer(&a).save(&cp).map_err(e)?;
    let loaded = Checkpoint::load(&cp).map_err(e)?;
    ensure(loaded.to_bytes().map_err(e)? == ba, "checkpoint bytes")?;
    let model = loaded.into_model().map_err(e)?;
    ensure(
        predict_dataset(&model, &data, 0).map_err(e)? == predict_dataset(&a.model, &data, 0).map_err(e)?,
        "checkpoint predictions",
    )?;
    Ok("feature, prototype and checkpoint files bit-exact; seeded training reproducible".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", gradient_integrity),
        ("detach contracts", detach_contracts),
        ("causality", causality),
        ("toeplitz structure", toeplitz_structure),
        ("semantic transfer", semantic_transfer),
        ("anticipation sanity", anticipation_sanity),
        ("metric oracles", metric_oracles),
        ("configuration fidelity", configuration_fidelity),
        ("subset inference", subset_inference),
        ("round trips", round_trips),
    ];
    // a filter argument from `cargo test` selects criteria by name
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
