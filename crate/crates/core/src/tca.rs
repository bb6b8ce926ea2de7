//! Temporal context aggregation.
//!
//! Each block projects every frame's tokens to queries, keys and values, then
//! accumulates keys and values over past frames with learnable per-step
//! weights before frame-local attention:
//!
//! ```text
//! K̂_0 = K_0,   K̂_t = K_t + α_{t−1} K̂_{t−1}     (same for V̂)
//! Ī_t = softmax(Q_t K̂_tᵀ / √d) V̂_t
//! ```
//!
//! The attention core sits inside a pre-norm residual block with an MLP.

use rand::Rng;

use crate::diff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::TokenSeq;
use crate::error::{Error, Result};
use crate::layers::{multi_head_attention, TransformerBlock};

pub const DEFAULT_BLOCKS: usize = 2;

/// Running weighted sums over frames. `alpha` is a `(T−1)`-vector, or `None` when `T = 1`.
pub fn aggregate_kv(tape: &mut Tape, frames: &[Var], alpha: Option<Var>) -> Result<Vec<Var>> {
    let t = frames.len();
    let have = alpha.map(|a| tape.value(a).len()).unwrap_or(0);
    if have + 1 != t.max(1) {
        return Err(Error::config(format!(
            "{have} aggregation weights for {t} frames (expected {})",
            t.saturating_sub(1)
        )));
    }
    let mut out: Vec<Var> = Vec::with_capacity(t);
    for (i, &f) in frames.iter().enumerate() {
        if i == 0 {
            out.push(f);
            continue;
        }
        let a = tape.element(alpha.expect("checked above"), i - 1)?;
        let carried = tape.scale_by(out[i - 1], a)?;
        out.push(tape.add(f, carried)?);
    }
    Ok(out)
}

/// Attention of one frame's queries over its aggregated keys and values, scale `1/√d`.
pub fn tca_attention(tape: &mut Tape, q: Var, k_hat: Var, v_hat: Var, heads: usize) -> Result<Var> {
    let d = tape.shape(q)[1];
    multi_head_attention(tape, q, k_hat, v_hat, heads, 1.0 / (d as f64).sqrt(), false)
}

#[derive(Debug, Clone)]
pub struct TcaBlock {
    pub block: TransformerBlock,
    pub alpha: Option<ParamId>,
    pub frames: usize,
}

impl TcaBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let block = TransformerBlock::new(store, name, dim, heads, 4 * dim, rng)?;
        let alpha = if frames > 1 {
            Some(store.register(format!("{name}.alpha"), Tensor::full(&[frames - 1], 1.0))?)
        } else {
            None
        };
        Ok(TcaBlock { block, alpha, frames })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, seq: TokenSeq) -> Result<TokenSeq> {
        if seq.frames != self.frames {
            return Err(Error::config(format!(
                "temporal aggregation was built for {} frames, got {}",
                self.frames, seq.frames
            )));
        }
        let b = &self.block;
        let n = seq.tokens;
        let h = b.ln1.forward(tape, p, seq.x)?;
        let q = b.wq.forward(tape, p, h)?;
        let k = b.wk.forward(tape, p, h)?;
        let v = b.wv.forward(tape, p, h)?;
        let split = |tape: &mut Tape, m: Var| -> Result<Vec<Var>> {
            (0..seq.frames)
                .map(|t| tape.slice_rows(m, t * n, (t + 1) * n))
                .collect()
        };
        let qs = split(tape, q)?;
        let (ks, vs) = (split(tape, k)?, split(tape, v)?);
        let alpha = self.alpha.map(|a| p[a]);
        let k_hat = aggregate_kv(tape, &ks, alpha)?;
        let v_hat = aggregate_kv(tape, &vs, alpha)?;
        let mut parts = Vec::with_capacity(seq.frames);
        for t in 0..seq.frames {
            parts.push(tca_attention(tape, qs[t], k_hat[t], v_hat[t], b.heads)?);
        }
        let attn = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(&parts)?
        };
        let o = b.wo.forward(tape, p, attn)?;
        let x = tape.add(seq.x, o)?;
        let h = b.ln2.forward(tape, p, x)?;
        let m = b.mlp.forward(tape, p, h)?;
        Ok(TokenSeq {
            x: tape.add(x, m)?,
            ..seq
        })
    }
}

/// Stack of temporal aggregation blocks.
#[derive(Debug, Clone)]
pub struct Tca {
    pub blocks: Vec<TcaBlock>,
}

impl Tca {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        frames: usize,
        blocks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|i| TcaBlock::new(store, &format!("tca.block{i}"), dim, heads, frames, rng))
            .collect::<Result<_>>()?;
        Ok(Tca { blocks })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, seq: TokenSeq) -> Result<TokenSeq> {
        tca_forward(tape, p, &self.blocks, seq)
    }
}

pub fn tca_forward(tape: &mut Tape, p: &Bound, blocks: &[TcaBlock], seq: TokenSeq) -> Result<TokenSeq> {
    if seq.tokens == 1 {
        return Err(Error::config(
            "temporal aggregation needs patch tokens; disable it for single-token (adapter) features",
        ));
    }
    blocks.iter().try_fold(seq, |s, b| b.forward(tape, p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn consts(tape: &mut Tape, vals: &[f64]) -> Vec<Var> {
        vals.iter().map(|&v| tape.constant(Tensor::full(&[1, 2], v))).collect()
    }

    #[test]
    fn unrolled_recurrence() {
        let mut tape = Tape::new();
        let ks = consts(&mut tape, &[1.0, 10.0, 100.0]);
        let a = tape.constant(Tensor::vector(vec![0.5, 0.5]));
        let out = aggregate_kv(&mut tape, &ks, Some(a)).unwrap();
        assert_eq!(tape.value(out[2]).data()[0], 100.0 + 5.0 + 0.25);
    }

    #[test]
    fn unit_weights_telescope() {
        let mut tape = Tape::new();
        let ks = consts(&mut tape, &[3.0; 4]);
        let a = tape.constant(Tensor::full(&[3], 1.0));
        let out = aggregate_kv(&mut tape, &ks, Some(a)).unwrap();
        for (t, v) in out.iter().enumerate() {
            assert_eq!(tape.value(*v).data()[0], 3.0 * (t + 1) as f64);
        }
        let zero = tape.constant(Tensor::zeros(&[3]));
        let out = aggregate_kv(&mut tape, &ks, Some(zero)).unwrap();
        assert!(out.iter().all(|v| tape.value(*v).data()[0] == 3.0));
    }

    #[test]
    fn weight_count_must_match() {
        let mut tape = Tape::new();
        let ks = consts(&mut tape, &[1.0; 3]);
        let a = tape.constant(Tensor::full(&[3], 1.0));
        assert!(matches!(aggregate_kv(&mut tape, &ks, Some(a)), Err(Error::Config(_))));
        assert!(matches!(aggregate_kv(&mut tape, &ks, None), Err(Error::Config(_))));
    }

    #[test]
    fn single_token_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let tca = Tca::new(&mut store, 4, 1, 2, 1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        let seq = TokenSeq {
            x,
            frames: 2,
            tokens: 1,
        };
        assert!(matches!(tca.forward(&mut tape, &p, seq), Err(Error::Config(_))));
    }
}
