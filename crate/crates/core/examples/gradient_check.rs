//! Finite-difference check of the complete training loss on a tiny model.

use sgear::dataio::synth::{generate_synthetic_dataset, successor_graph, SynthConfig};
use sgear::dataio::Dataset;
use sgear::diff::{grad_check, grad_check_params, Tape, Tensor, DEFAULT_EPS};
use sgear::model::{Model, ModelConfig};
use sgear::semantic::LossWeights;

fn main() -> sgear::Result<()> {
    let err = grad_check(
        &[Tensor::vector(vec![0.3, -1.2, 2.0])],
        |tape, v| {
            let s = tape.softmax_rows(v[0])?;
            tape.cross_entropy(s, 1)
        },
        DEFAULT_EPS,
    )?;
    println!("softmax + cross-entropy: max relative error {err:.2e}");

    let (k, t, tokens, d) = (6, 3, 5, 16);
    let mut sc = SynthConfig::new(k, t, d, 1, successor_graph(k, 2, 0.9), 4);
    sc.tokens = tokens;
    let synth = generate_synthetic_dataset(&sc)?;
    let clip = Dataset::from_synthetic(&synth, sc.tau_a)?.clips.remove(0);
    let mut mc = ModelConfig::desk(k, t, tokens, d);
    mc.tca_blocks = 1;
    mc.decoder.layers = 1;
    mc.decoder.mlp_hidden = 16;
    let model = Model::new(mc, Some(synth.language.to_tensor()))?;

    // hold the prototype selection fixed so the loss is smooth around the probe point
    let mut tape = Tape::new();
    let p = tape.bind(&model.params);
    let selection = model.forward(&mut tape, &p, &clip, None)?.selection;
    let w = LossWeights::new(1.0, 1.0, 1.0, 1.0, 1.0);
    let report = grad_check_params(
        &model.params,
        |tape, p| Ok(model.clip_loss(tape, p, &clip, &w, selection.as_deref())?.0),
        DEFAULT_EPS,
    )?;
    println!(
        "full loss: {} coordinates, max relative error {:.2e} at {:?}",
        report.coordinates, report.max_rel_error, report.worst
    );
    Ok(())
}
