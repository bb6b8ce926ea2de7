//! Causal decoding and autoregressive rollout past the observed window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgear::decoder::{Decoder, DecoderConfig};
use sgear::diff::{ParamStore, Tape, Tensor};

fn main() -> sgear::Result<()> {
    let (t, d) = (4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cfg = DecoderConfig {
        mlp_hidden: 32,
        max_rollout: 4,
        ..DecoderConfig::default()
    };
    let dec = Decoder::new(&mut store, &cfg, d, t, &mut rng)?;
    let x = Tensor::randn(&[t, d], 1.0, &mut rng);

    for steps in 0..=cfg.max_rollout {
        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let xv = tape.constant(x.clone());
        let r = dec.rollout(&mut tape, &p, xv, steps)?;
        let last = r.last(&mut tape)?;
        let v = tape.value(last).data();
        println!(
            "{steps} extra steps: inputs {:?}, last[0..3] {:.4?}",
            tape.shape(r.inputs),
            &v[..3]
        );
    }
    let mut tape = Tape::new();
    let p = tape.bind(&store);
    let xv = tape.constant(x);
    match dec.rollout(&mut tape, &p, xv, cfg.max_rollout + 1) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("rollout past the limit"),
    }
    Ok(())
}
