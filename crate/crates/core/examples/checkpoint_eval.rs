//! Trains briefly, saves and reloads a checkpoint, then evaluates it at the
//! training anticipation time and at longer ones by rollout.

use sgear::dataio::synth::{generate_synthetic_dataset, successor_graph, SynthConfig};
use sgear::dataio::Dataset;
use sgear::eval::{eval_variable_tau, evaluate, predict_dataset};
use sgear::model::ModelConfig;
use sgear::trainer::{make_preset, Checkpoint, Trainer};

fn main() -> sgear::Result<()> {
    let (k, frames, dim) = (8, 4, 16);
    let mut sc = SynthConfig::new(k, frames, dim, 80, successor_graph(k, 2, 0.95), 9);
    sc.tokens = 3;
    let synth = generate_synthetic_dataset(&sc)?;
    let data = Dataset::from_synthetic(&synth, sc.tau_a)?;

    let mut tc = make_preset("desk")?;
    tc.epochs = 8;
    let mut t = Trainer::new(
        ModelConfig::desk(k, frames, sc.tokens, dim),
        tc,
        Some(synth.language.to_tensor()),
    )?;
    t.fit(&data, |_| {})?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.sgck");
    Checkpoint::from_trainer(&t).save(&path)?;
    let restored = Checkpoint::load(&path)?.into_model()?;
    let same = predict_dataset(&t.model, &data, 0)? == predict_dataset(&restored, &data, 0)?;
    println!(
        "{} bytes on disk, identical predictions after reload: {same}",
        std::fs::metadata(&path)?.len()
    );

    let m = evaluate(&restored, &data)?;
    println!(
        "top1 {:.3} top5 {:.3} mean top5 recall {:.3}",
        m.top1, m.top5, m.mean_top5_recall
    );
    let rows = eval_variable_tau(&restored, sc.tau_a, sc.fps, &[1.0, 2.0, 3.0], |tau| {
        Dataset::from_synthetic(&synth, tau)
    })?;
    for r in rows {
        println!("tau_a {:.1}s ({} rollout steps): top1 {:.3}", r.tau_a, r.steps, r.top1);
    }
    Ok(())
}
