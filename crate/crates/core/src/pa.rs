//! Prototype attention.
//!
//! Class tokens pick their most similar visual prototypes, attend to them,
//! and mix the attention weights with a learnable Toeplitz matrix that
//! encodes temporal order among the selected prototypes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{cosine, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaScale {
    /// Scores divided by `d`.
    #[default]
    D,
    /// Scores divided by `√d`.
    SqrtD,
}

impl PaScale {
    pub fn factor(self, d: usize) -> f64 {
        match self {
            PaScale::D => 1.0 / d as f64,
            PaScale::SqrtD => 1.0 / (d as f64).sqrt(),
        }
    }
}

/// `T × K` cosine similarities between class tokens and prototypes.
pub fn frame_relative_repr(cls: &Tensor, protos: &Tensor) -> Result<Tensor> {
    let (t, d) = cls.matrix_dims();
    let (k, pd) = protos.matrix_dims();
    if d != pd {
        return Err(Error::dim("frame_relative_repr", cls.shape(), protos.shape()));
    }
    let mut out = Vec::with_capacity(t * k);
    for row in cls.rows() {
        out.extend(protos.rows().map(|p| cosine(row, p)));
    }
    Tensor::new(vec![t, k], out)
}

/// Top-`k` prototype indices of each row, most similar first; ties go to the lower index.
pub fn select_prototypes(r: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    let (_, n) = r.matrix_dims();
    if k == 0 || k > n {
        return Err(Error::config(format!("cannot select {k} of {n} prototypes")));
    }
    Ok(r.rows()
        .map(|row| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect())
}

/// Index into the weight vector for entry `(i, j)` of a `T × m` Toeplitz matrix.
///
/// The main diagonal uses `w_0`, superdiagonal `j − i` uses `w_{j−i}` and
/// subdiagonal `i − j` uses `w_{m−1+i−j}`. When `trained` gives a smaller
/// `(T, m)` than requested, offsets past the trained range reuse the
/// outermost trained diagonal.
pub fn toeplitz_index(i: usize, j: usize, trained: (usize, usize)) -> usize {
    let (tt, mt) = trained;
    if j >= i {
        (j - i).min(mt - 1)
    } else if tt > 1 {
        mt - 1 + (i - j).min(tt - 1)
    } else {
        0
    }
}

/// `T × m` Toeplitz matrix built from `T + m − 1` weights, as a tape node.
pub fn build_toeplitz(tape: &mut Tape, w: Var, t: usize, m: usize) -> Result<Var> {
    let n = tape.value(w).len();
    if n != t + m - 1 {
        return Err(Error::config(format!(
            "a {t}x{m} Toeplitz matrix needs {} weights, got {n}",
            t + m - 1
        )));
    }
    build_toeplitz_extended(tape, w, t, m, (t, m))
}

/// Like [`build_toeplitz`] for a weight vector sized for `trained = (T₀, m₀)`.
pub fn build_toeplitz_extended(tape: &mut Tape, w: Var, t: usize, m: usize, trained: (usize, usize)) -> Result<Var> {
    let n = tape.value(w).len();
    if n != trained.0 + trained.1 - 1 {
        return Err(Error::config(format!(
            "Toeplitz weights have length {n}, expected {}",
            trained.0 + trained.1 - 1
        )));
    }
    let index = (0..t)
        .flat_map(|i| (0..m).map(move |j| toeplitz_index(i, j, trained)))
        .collect();
    tape.gather(w, index, vec![t, m])
}

/// `(σ(β)·softmax(q kᵀ·scale) + (1 − σ(β))·Δ) v`.
pub fn pa_fuse(tape: &mut Tape, q: Var, k: Var, v: Var, delta: Var, beta: Var, scale: f64) -> Result<Var> {
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, scale)?;
    let attn = tape.softmax_rows(scores)?;
    if tape.shape(delta) != tape.shape(attn) {
        return Err(Error::dim("pa_fuse", tape.shape(attn), tape.shape(delta)));
    }
    let w = tape.sigmoid_mix(beta, attn, delta)?;
    tape.matmul(w, v)
}

/// `σ(λ)·a + (1 − σ(λ))·b`.
pub fn merge(tape: &mut Tape, a: Var, b: Var, lambda: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim("merge", tape.shape(a), tape.shape(b)));
    }
    tape.sigmoid_mix(lambda, a, b)
}

#[derive(Debug, Clone)]
pub struct PaBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub toe: ParamId,
    pub beta: ParamId,
    pub lambda: ParamId,
    pub k: usize,
    pub frames: usize,
    pub scale: PaScale,
}

/// Output of a prototype attention pass.
#[derive(Debug, Clone)]
pub struct PaOutput {
    /// `T × d` prototype-enhanced features.
    pub fused: Var,
    /// Selected prototype indices per frame.
    pub selection: Vec<Vec<usize>>,
}

impl PaBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        frames: usize,
        k: usize,
        scale: PaScale,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("prototype attention needs k >= 1"));
        }
        let m = frames * k;
        Ok(PaBlock {
            wq: Linear::new(store, "pa.wq", dim, dim, rng)?,
            wk: Linear::new(store, "pa.wk", dim, dim, rng)?,
            wv: Linear::new(store, "pa.wv", dim, dim, rng)?,
            wo: Linear::new(store, "pa.wo", dim, dim, rng)?,
            toe: store.register("pa.toe", Tensor::zeros(&[frames + m - 1]))?,
            beta: store.register("pa.beta", Tensor::vector(vec![0.0]))?,
            lambda: store.register("pa.lambda", Tensor::vector(vec![0.0]))?,
            k,
            frames,
            scale,
        })
    }

    /// Prototype attention from class tokens `cls` (T×d) over `protos` (K×d).
    ///
    /// Selection uses the current values and is not differentiated; pass
    /// `selection` to hold it fixed.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        cls: Var,
        protos: Var,
        selection: Option<&[Vec<usize>]>,
    ) -> Result<PaOutput> {
        let selection = match selection {
            Some(s) => s.to_vec(),
            None => {
                let r = frame_relative_repr(tape.value(cls), tape.value(protos))?;
                select_prototypes(&r, self.k)?
            }
        };
        let t = tape.shape(cls)[0];
        let d = tape.shape(cls)[1];
        let flat: Vec<usize> = selection.iter().flatten().copied().collect();
        let m = flat.len();
        let sel = tape.gather_rows(protos, &flat)?;
        let q = self.wq.forward(tape, p, cls)?;
        let k = self.wk.forward(tape, p, sel)?;
        let v = self.wv.forward(tape, p, sel)?;
        let delta = build_toeplitz_extended(tape, p[self.toe], t, m, (self.frames, self.frames * self.k))?;
        let f = pa_fuse(tape, q, k, v, delta, p[self.beta], self.scale.factor(d))?;
        Ok(PaOutput {
            fused: self.wo.forward(tape, p, f)?,
            selection,
        })
    }

    pub fn merge(&self, tape: &mut Tape, p: &Bound, context: Var, fused: Var) -> Result<Var> {
        merge(tape, context, fused, p[self.lambda])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        let r = Tensor::from_rows(&[vec![0.1, 0.9, 0.3]]).unwrap();
        assert_eq!(select_prototypes(&r, 1).unwrap(), vec![vec![1]]);
        assert_eq!(select_prototypes(&r, 2).unwrap(), vec![vec![1, 2]]);
        let tie = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(select_prototypes(&tie, 1).unwrap(), vec![vec![0]]);
        assert!(select_prototypes(&tie, 3).is_err());
    }

    #[test]
    fn three_by_three_layout() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![0.0, 1.0, 2.0, 3.0, 4.0]));
        let d = build_toeplitz(&mut tape, w, 3, 3).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 3.0, 0.0]);

        let w1 = tape.constant(Tensor::vector(vec![7.0]));
        let d1 = build_toeplitz(&mut tape, w1, 1, 1).unwrap();
        assert_eq!(tape.value(d1).data(), &[7.0]);
        assert!(matches!(build_toeplitz(&mut tape, w, 2, 2), Err(Error::Config(_))));
    }

    #[test]
    fn extension_repeats_outer_diagonals() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![0.0, 1.0, 2.0]));
        let d = build_toeplitz_extended(&mut tape, w, 3, 3, (2, 2)).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0, 1.0, 1.0, 2.0, 0.0, 1.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn merge_quarter() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![4.0, 0.0]));
        let b = tape.constant(Tensor::vector(vec![0.0, 8.0]));
        let lam = tape.constant(Tensor::vector(vec![-(3.0f64).ln()]));
        let out = merge(&mut tape, a, b, lam).unwrap();
        let got = tape.value(out).data();
        assert!((got[0] - 1.0).abs() < 1e-12 && (got[1] - 6.0).abs() < 1e-12);
    }
}
