use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::semantic::store::{LanguageTargets, PrototypeSubset};

/// Distance used between predicted and next-step features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatNorm {
    /// Mean squared difference per step.
    #[default]
    Mse,
    /// Euclidean distance per step.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sem: f64,
    pub reg: f64,
    pub cls: f64,
    pub past: f64,
    pub feat: f64,
}

impl LossWeights {
    pub const NAMES: [&'static str; 5] = ["sem", "reg", "cls", "past", "feat"];

    pub fn new(sem: f64, reg: f64, cls: f64, past: f64, feat: f64) -> Self {
        LossWeights {
            sem,
            reg,
            cls,
            past,
            feat,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.sem, self.reg, self.cls, self.past, self.feat]
    }

    pub fn from_map(map: &HashMap<String, f64>) -> Result<Self> {
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::config(format!("loss weight `{k}` is missing")))
        };
        Ok(LossWeights::new(
            get("sem")?,
            get("reg")?,
            get("cls")?,
            get("past")?,
            get("feat")?,
        ))
    }
}

/// Individual loss terms of one clip; `None` for terms that do not apply.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub sem: Option<Var>,
    pub reg: Option<Var>,
    pub cls: Option<Var>,
    pub past: Option<Var>,
    pub feat: Option<Var>,
}

impl LossParts {
    pub fn as_array(&self) -> [Option<Var>; 5] {
        [self.sem, self.reg, self.cls, self.past, self.feat]
    }
}

pub fn total_loss(tape: &mut Tape, parts: &LossParts, weights: &LossWeights) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (part, w) in parts.as_array().into_iter().zip(weights.as_array()) {
        let Some(v) = part else { continue };
        if w == 0.0 {
            continue;
        }
        let term = tape.scale(v, w)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// Mean over rows of the mean absolute gap between `cos(detach(z_i), P)` and the
/// language target of `targets[i]`. Only the prototypes receive gradient.
pub fn loss_sem(
    tape: &mut Tape,
    z: Var,
    protos: Var,
    targets: &[usize],
    language: &LanguageTargets,
    subset: &PrototypeSubset,
) -> Result<Var> {
    let zd = tape.detach(z)?;
    let r = tape.cosine_rows(zd, protos)?;
    let goal = tape.constant(language.rows(targets, subset)?);
    tape.l1_mean(r, goal)
}

/// Mean over rows of `‖z_i − detach(ρ[targets_i])‖² / d`. Only `z` receives gradient.
pub fn loss_reg(tape: &mut Tape, z: Var, protos: Var, targets: &[usize]) -> Result<Var> {
    let picked = tape.gather_rows(protos, targets)?;
    let picked = tape.detach(picked)?;
    tape.mse(z, picked)
}

pub fn loss_cls(tape: &mut Tape, logits: Var, target: usize) -> Result<Var> {
    tape.cross_entropy(logits, target)
}

/// Sum of per-step cross-entropies over labeled rows; `None` when no row is labeled.
pub fn loss_past(tape: &mut Tape, logits: Var, labels: &[Option<usize>]) -> Result<Option<Var>> {
    let (rows, targets): (Vec<usize>, Vec<usize>) =
        labels.iter().enumerate().filter_map(|(i, l)| l.map(|y| (i, y))).unzip();
    if rows.is_empty() {
        return Ok(None);
    }
    let picked = tape.gather_rows(logits, &rows)?;
    tape.cross_entropy_rows(picked, &targets).map(Some)
}

/// `Σ_{t<T−1} dist(z_t, detach(Î_{t+1}))`; `None` when `T = 1`.
pub fn loss_feat(tape: &mut Tape, z: Var, i_hat: Var, norm: FeatNorm) -> Result<Option<Var>> {
    let s = tape.shape(z).to_vec();
    if tape.shape(i_hat) != s.as_slice() {
        return Err(Error::dim("loss_feat", &s, tape.shape(i_hat)));
    }
    let t = s[0];
    if t < 2 {
        return Ok(None);
    }
    let pred = tape.slice_rows(z, 0, t - 1)?;
    let next = tape.slice_rows(i_hat, 1, t)?;
    let next = tape.detach(next)?;
    match norm {
        FeatNorm::Mse => {
            let m = tape.mse(pred, next)?;
            tape.scale(m, (t - 1) as f64).map(Some)
        }
        FeatNorm::L2 => {
            let diff = tape.sub(pred, next)?;
            let sq = tape.mul(diff, diff)?;
            let ones = tape.constant(Tensor::full(&[s[1], 1], 1.0));
            let per_row = tape.matmul(sq, ones)?;
            let eps = tape.constant(Tensor::full(&[t - 1, 1], 1e-12));
            let per_row = tape.add(per_row, eps)?;
            let norms = tape.sqrt(per_row)?;
            tape.sum(norms).map(Some)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reg_by_hand() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let p = tape.constant(Tensor::zeros(&[3, 2]));
        let l = loss_reg(&mut tape, z, p, &[2]).unwrap();
        assert_eq!(tape.value(l).item(), 0.5);
    }

    #[test]
    fn feat_by_hand() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap());
        let i = tape.constant(Tensor::from_rows(&[vec![0.0], vec![3.0]]).unwrap());
        let l = loss_feat(&mut tape, z, i, FeatNorm::Mse).unwrap().unwrap();
        assert_eq!(tape.value(l).item(), 4.0);
        let l2 = loss_feat(&mut tape, z, i, FeatNorm::L2).unwrap().unwrap();
        assert!((tape.value(l2).item() - 2.0).abs() < 1e-9);

        let one = tape.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        assert!(loss_feat(&mut tape, one, one, FeatNorm::Mse).unwrap().is_none());
    }

    #[test]
    fn past_sums_labeled_rows() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[4, 4]));
        let l = loss_past(&mut tape, logits, &[Some(0), None, Some(3), Some(1)])
            .unwrap()
            .unwrap();
        assert!((tape.value(l).item() - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!(loss_past(&mut tape, logits, &[None; 4]).unwrap().is_none());
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::scalar(1.0));
        let parts = LossParts {
            sem: Some(one),
            cls: Some(one),
            ..Default::default()
        };
        let t = total_loss(&mut tape, &parts, &LossWeights::new(0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(tape.value(t).item(), 0.0);
        let t = total_loss(&mut tape, &parts, &LossWeights::new(4.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(tape.value(t).item(), 5.0);
    }

    #[test]
    fn missing_weight_is_a_config_error() {
        let map: HashMap<String, f64> = [("sem", 1.0), ("reg", 1.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        assert!(matches!(LossWeights::from_map(&map), Err(Error::Config(_))));
    }
}
