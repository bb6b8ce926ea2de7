//! Trains the full model and the plain baseline on a synthetic Markov-chain
//! dataset and reports train and held-out accuracy.
//!
//! ```text
//! cargo run --release --example train_synthetic [SEED] [SETTING...]
//! ```

use std::time::Instant;

use sgear::dataio::synth::{generate_synthetic_dataset, successor_graph, SynthConfig};
use sgear::dataio::Dataset;
use sgear::eval::evaluate;
use sgear::model::{ModelConfig, Toggles};
use sgear::trainer::{make_preset, Trainer};

fn main() -> sgear::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let mut settings: Vec<String> = args.collect();
    if settings.is_empty() {
        settings = vec!["full".into(), "1".into()];
    }

    let (k, frames, dim) = (12, 8, 16);
    let mut sc = SynthConfig::new(k, frames, dim, 300, successor_graph(k, 2, 0.99), 7);
    sc.tokens = 5;
    let synth = generate_synthetic_dataset(&sc)?;
    let data = Dataset::from_synthetic(&synth, sc.tau_a)?;
    let (train, held) = data.split(0.8, 1);

    for setting in &settings {
        let mut tc = make_preset("desk")?;
        tc.toggles = Toggles::setting(setting)?;
        tc.seed = seed;
        let mc = ModelConfig::desk(k, frames, sc.tokens, dim);
        let mut t = Trainer::new(mc, tc, Some(synth.language.to_tensor()))?;
        let start = Instant::now();
        t.fit(&train, |r| {
            if r.epoch % 5 == 4 {
                println!(
                    "  epoch {:>3} total {:.4} cls {:.4}",
                    r.epoch + 1,
                    r.loss.total,
                    r.loss.cls
                );
            }
        })?;
        let tr = evaluate(&t.model, &train)?;
        let ho = evaluate(&t.model, &held)?;
        println!(
            "setting {setting:>4}: train top1 {:.3}, held-out top1 {:.3} ({:.1?})",
            tr.top1,
            ho.top1,
            start.elapsed()
        );
    }
    Ok(())
}
