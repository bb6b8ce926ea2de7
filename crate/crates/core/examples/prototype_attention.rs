//! Prototype attention: Toeplitz order encoding, prototype selection and the
//! fused output of one block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgear::diff::{ParamStore, Tape, Tensor};
use sgear::pa::{build_toeplitz, frame_relative_repr, select_prototypes, PaBlock, PaScale};

fn main() -> sgear::Result<()> {
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::vector((0..5).map(f64::from).collect()));
    let delta = build_toeplitz(&mut tape, w, 3, 3)?;
    println!("3x3 Toeplitz from w0..w4:");
    for row in tape.value(delta).rows() {
        println!("  {row:?}");
    }

    let (t, k, d) = (4, 6, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let protos = Tensor::randn(&[k, d], 1.0, &mut rng);
    let cls = Tensor::randn(&[t, d], 1.0, &mut rng);
    let r = frame_relative_repr(&cls, &protos)?;
    println!("top-2 prototypes per frame: {:?}", select_prototypes(&r, 2)?);

    let mut store = ParamStore::new();
    let pa = PaBlock::new(&mut store, d, t, 2, PaScale::D, &mut rng)?;
    let mut tape = Tape::new();
    let p = tape.bind(&store);
    let c = tape.constant(cls);
    let pr = tape.constant(protos);
    let out = pa.forward(&mut tape, &p, c, pr, None)?;
    let merged = pa.merge(&mut tape, &p, c, out.fused)?;
    println!(
        "fused {:?}, merged {:?}, order weights {}",
        tape.shape(out.fused),
        tape.shape(merged),
        store.get(pa.toe).value.len()
    );
    Ok(())
}
