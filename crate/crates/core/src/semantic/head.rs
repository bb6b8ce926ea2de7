use rand::Rng;

use crate::diff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::layers::Linear;

/// Mixes each row of `z` with a similarity-weighted average of the prototypes:
/// `z̄ = softmax(cos(z, P)) P`, `ẑ = σ(α) z + (1 − σ(α)) z̄`.
pub fn cosine_attention(tape: &mut Tape, z: Var, protos: Var, alpha: Var) -> Result<Var> {
    let r = tape.cosine_rows(z, protos)?;
    let w = tape.softmax_rows(r)?;
    let z_bar = tape.matmul(w, protos)?;
    tape.sigmoid_mix(alpha, z, z_bar)
}

/// Classification head: optional cosine attention followed by a `d → K` linear layer.
#[derive(Debug, Clone)]
pub struct Head {
    pub alpha: ParamId,
    pub linear: Linear,
    pub cosine: bool,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        classes: usize,
        cosine: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Head {
            alpha: store.register("head.alpha", Tensor::vector(vec![0.0]))?,
            linear: Linear::new(store, "head.linear", dim, classes, rng)?,
            cosine,
        })
    }

    /// Logits for each row of `z`. `protos` (the prototype subset) is used when the cosine path is on.
    pub fn logits(&self, tape: &mut Tape, p: &Bound, z: Var, protos: Option<Var>) -> Result<Var> {
        let z_hat = match (self.cosine, protos) {
            (true, Some(protos)) => cosine_attention(tape, z, protos, p[self.alpha])?,
            _ => z,
        };
        classify(tape, p, &self.linear, z_hat)
    }
}

pub fn classify(tape: &mut Tape, p: &Bound, linear: &Linear, z_hat: Var) -> Result<Var> {
    linear.forward(tape, p, z_hat)
}

/// Row-wise softmax of a plain logits vector.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_prototype_is_the_aggregate() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let p = tape.constant(Tensor::from_rows(&[vec![0.0, 3.0]]).unwrap());
        let a = tape.constant(Tensor::vector(vec![-1e3]));
        let out = cosine_attention(&mut tape, z, p, a).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 3.0]);
    }

    #[test]
    fn even_mix_by_hand() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let p = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let a = tape.constant(Tensor::vector(vec![0.0]));
        let out = cosine_attention(&mut tape, z, p, a).unwrap();
        let e = 1f64.exp();
        let (w0, w1) = (e / (e + 1.0), 1.0 / (e + 1.0));
        let want = [0.5 + 0.5 * 2.0 * w0, 0.5 * w1];
        let got = tape.value(out).data();
        assert!((got[0] - want[0]).abs() < 1e-7 && (got[1] - want[1]).abs() < 1e-7);
    }

    #[test]
    fn uniform_probabilities() {
        assert_eq!(probabilities(&[0.0; 4]), vec![0.25; 4]);
    }
}
