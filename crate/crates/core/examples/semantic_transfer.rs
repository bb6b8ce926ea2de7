//! Trains visual prototypes with the semantic and regularization losses only
//! and tracks how closely their geometry follows the language prototypes.

use sgear::dataio::synth::{generate_synthetic_dataset, successor_graph, SynthConfig};
use sgear::dataio::Dataset;
use sgear::model::ModelConfig;
use sgear::semantic::{alignment_score, LossWeights};
use sgear::trainer::{lr_at, make_preset, Trainer};

fn main() -> sgear::Result<()> {
    let (k, frames, dim) = (12, 4, 16);
    let mut sc = SynthConfig::new(k, frames, dim, 200, successor_graph(k, 2, 0.9), 3);
    sc.tokens = 5;
    let synth = generate_synthetic_dataset(&sc)?;
    let data = Dataset::from_synthetic(&synth, sc.tau_a)?;
    let language = synth.language.to_tensor();

    let mut tc = make_preset("desk")?;
    tc.loss_weights = LossWeights::new(1.0, 1.0, 0.0, 0.0, 0.0);
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let mut t = Trainer::new(
        ModelConfig::desk(k, frames, sc.tokens, dim),
        tc.clone(),
        Some(language.clone()),
    )?;
    let score = |t: &Trainer| alignment_score(t.model.visual_prototypes().unwrap(), &language);
    println!("step     0 alignment {:+.3}", score(&t)?);
    let n = data.len();
    for step in 0..steps {
        let batch: Vec<_> = (0..tc.batch_size)
            .map(|i| &data.clips[(step * tc.batch_size + i) % n])
            .collect();
        let lr = lr_at(step, 50, steps, tc.lr);
        let v = t.train_step(&batch, lr)?;
        if (step + 1) % 250 == 0 {
            println!(
                "step {:>5} alignment {:+.3} sem {:.4} reg {:.4}",
                step + 1,
                score(&t)?,
                v.sem,
                v.reg
            );
        }
    }
    Ok(())
}
