//! Building blocks shared by the encoder, TCA and decoder.

use rand::Rng;

use crate::diff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Affine map `x W + b` applied to the rows of `x`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let weight = store.register(format!("{name}.weight"), Tensor::randn(&[in_dim, out_dim], std, rng))?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_row(y, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.register(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias])
    }
}

/// Two-layer GELU perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, p, h)
    }
}

/// Multi-head scaled dot-product attention of `q` (n×d) over `k`, `v` (m×d).
///
/// Heads split the channel axis evenly; each head's scores are multiplied
/// by `scale`. With `causal`, query i sees keys `0..=i` only (requires n = m).
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: f64,
    causal: bool,
) -> Result<Var> {
    let d = tape.shape(q)[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("{heads} heads do not divide d = {d}")));
    }
    if tape.shape(k)[1] != d || tape.shape(v)[1] != d || tape.shape(k)[0] != tape.shape(v)[0] {
        return Err(Error::dim("attention", tape.shape(q), tape.shape(k)));
    }
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, (h + 1) * dh)?,
                tape.slice_cols(k, h * dh, (h + 1) * dh)?,
                tape.slice_cols(v, h * dh, (h + 1) * dh)?,
            )
        };
        let scores = tape.matmul_bt(qh, kh)?;
        let scores = tape.scale(scores, scale)?;
        let w = if causal {
            tape.causal_softmax_rows(scores)?
        } else {
            tape.softmax_rows(scores)?
        };
        outs.push(tape.matmul(w, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Pre-norm transformer block: `x + Wo·attn(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("{name}: {heads} heads do not divide d = {dim}")));
        }
        Ok(TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, rng)?,
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, rng)?,
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, rng)?,
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, mlp_hidden, rng)?,
            heads,
        })
    }

    /// Applies the block to consecutive groups of `group` rows independently.
    pub fn forward_grouped(&self, tape: &mut Tape, p: &Bound, x: Var, group: usize, causal: bool) -> Result<Var> {
        let rows = tape.shape(x)[0];
        if group == 0 || rows % group != 0 {
            return Err(Error::dim("transformer block", tape.shape(x), &[group]));
        }
        let d = tape.shape(x)[1];
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let h = self.ln1.forward(tape, p, x)?;
        let q = self.wq.forward(tape, p, h)?;
        let k = self.wk.forward(tape, p, h)?;
        let v = self.wv.forward(tape, p, h)?;
        let attn = if group == rows {
            multi_head_attention(tape, q, k, v, self.heads, scale, causal)?
        } else {
            let mut parts = Vec::with_capacity(rows / group);
            for g in 0..rows / group {
                let (a, b) = (g * group, (g + 1) * group);
                let qg = tape.slice_rows(q, a, b)?;
                let kg = tape.slice_rows(k, a, b)?;
                let vg = tape.slice_rows(v, a, b)?;
                parts.push(multi_head_attention(tape, qg, kg, vg, self.heads, scale, causal)?);
            }
            tape.concat_rows(&parts)?
        };
        let o = self.wo.forward(tape, p, attn)?;
        let x = tape.add(x, o)?;
        let h = self.ln2.forward(tape, p, x)?;
        let m = self.mlp.forward(tape, p, h)?;
        tape.add(x, m)
    }
}
