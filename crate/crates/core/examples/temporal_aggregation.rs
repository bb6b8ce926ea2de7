//! Temporal context aggregation: aggregated keys carry the past, and changing
//! a later frame leaves earlier outputs untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgear::diff::{ParamStore, Tape, Tensor};
use sgear::encoder::TokenSeq;
use sgear::tca::{aggregate_kv, Tca};

fn main() -> sgear::Result<()> {
    let mut tape = Tape::new();
    let frames: Vec<_> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&v| tape.constant(Tensor::full(&[1, 1], v)))
        .collect();
    let alpha = tape.constant(Tensor::vector(vec![0.5, 0.5]));
    let agg = aggregate_kv(&mut tape, &frames, Some(alpha))?;
    let vals: Vec<f64> = agg.iter().map(|&v| tape.value(v).item()).collect();
    println!("aggregated with alpha 0.5: {vals:?}");

    let (t, n, d) = (5, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let tca = Tca::new(&mut store, d, 2, t, 2, &mut rng)?;
    let x = Tensor::randn(&[t * n, d], 1.0, &mut rng);
    let run = |x: Tensor| -> sgear::Result<Tensor> {
        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let xv = tape.constant(x);
        let out = tca.forward(
            &mut tape,
            &p,
            TokenSeq {
                x: xv,
                frames: t,
                tokens: n,
            },
        )?;
        Ok(tape.value(out.x).clone())
    };
    let base = run(x.clone())?;
    let mut shifted = x;
    for v in &mut shifted.data_mut()[(t - 1) * n * d..] {
        *v += 10.0;
    }
    let moved = run(shifted)?;
    for f in 0..t {
        let diff = (f * n..(f + 1) * n)
            .flat_map(|r| base.row(r).iter().zip(moved.row(r)).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        println!("frame {f}: max change {diff:.3e}");
    }
    Ok(())
}
