//! Late fusion of per-model class probabilities with preset weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgear::eval::{fusion_preset, late_fuse, Metrics, PredictionRecord, PredictionSet};
use sgear::semantic::probabilities;

/// A noisy model: logits favour the truth by `skill`.
fn model(clips: usize, k: usize, skill: f64, seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = ChaCha8Rng::seed_from_u64(0);
    PredictionSet {
        records: (0..clips)
            .map(|i| {
                let y = truth.random_range(0..k);
                let logits: Vec<f64> = (0..k)
                    .map(|j| rng.random::<f64>() * 2.0 + if j == y { skill } else { 0.0 })
                    .collect();
                PredictionRecord::new(format!("clip{i}"), probabilities(&logits), y)
            })
            .collect(),
    }
}

fn main() -> sgear::Result<()> {
    let names = ["vit", "vit_low", "tsn", "ircsn", "obj"];
    let sets: Vec<PredictionSet> = names
        .iter()
        .enumerate()
        .map(|(i, _)| model(200, 20, 1.2 - 0.15 * i as f64, i as u64 + 1))
        .collect();
    for (n, s) in names.iter().zip(&sets) {
        println!("{n:>8}: top1 {:.3}", Metrics::of(s)?.top1);
    }
    let preset = fusion_preset("ek100")?;
    let weighted: Vec<(&PredictionSet, f64)> = sets.iter().zip(preset.iter().map(|p| p.1)).collect();
    let fused = late_fuse(&weighted)?;
    fused.validate()?;
    let m = Metrics::of(&fused)?;
    println!(
        "   fused: top1 {:.3} top5 {:.3} mean top5 recall {:.3}",
        m.top1, m.top5, m.mean_top5_recall
    );
    Ok(())
}
