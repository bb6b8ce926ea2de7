//! Encodes raw frames with the patch transformer and shows the token layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgear::dataio::ClipInput;
use sgear::diff::{ParamStore, Tape, Tensor};
use sgear::encoder::{patchify, Encoder, EncoderConfig};

fn main() -> sgear::Result<()> {
    let frame = Tensor::new(vec![4, 4, 1], (0..16).map(f64::from).collect())?;
    let patches = patchify(&frame, 2)?;
    for (i, row) in patches.rows().enumerate() {
        println!("patch {i}: {row:?}");
    }

    let cfg = EncoderConfig::VitLite {
        patch_size: 4,
        depth: 2,
        heads: 2,
        input_size: (8, 8),
        channels: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, &cfg, 16, &mut rng)?;
    let frames = Tensor::randn(&[3, 8, 8, 3], 1.0, &mut rng);

    let mut tape = Tape::new();
    let p = tape.bind(&store);
    let seq = enc.forward(&mut tape, &p, &ClipInput::Frames(frames), None)?;
    let cls = seq.class_tokens(&mut tape)?;
    println!(
        "{} frames x {} tokens, output {:?}, class tokens {:?}, {} parameters",
        seq.frames,
        seq.tokens,
        tape.shape(seq.x),
        tape.shape(cls),
        store.numel()
    );
    Ok(())
}
