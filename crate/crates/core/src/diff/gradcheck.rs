//! Central finite-difference verification of tape gradients.

use crate::diff::tape::{Bound, Tape, Var};
use crate::diff::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest per-coordinate discrepancy found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name or position, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

fn rel_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs())
}

fn eval_scalar(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::dim("grad_check", v.shape(), &[]));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of `f` with respect to each input tensor
/// against central differences and returns the maximum relative error.
///
/// Detached values are held at the probe point during the perturbed
/// evaluations, so stop-gradient terms are checked as the constants that
/// backpropagation treats them as.
pub fn grad_check<F>(inputs: &[Tensor], f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(inputs, f, eps)?.max_rel_error)
}

pub fn grad_check_report<F>(inputs: &[Tensor], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    let fixed = tape.detached().to_vec();
    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::replaying(fixed.clone());
        let vs: Vec<Var> = probe.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &vs)?;
        eval_scalar(&t, o)
    };
    for (ti, ad) in analytic.iter().enumerate() {
        for (k, &g_ad) in ad.iter().enumerate() {
            let orig = probe[ti].data()[k];
            probe[ti].data_mut()[k] = orig + eps;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[k] = orig - eps;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let err = rel_error(g_ad, fd);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((format!("input {ti}"), k));
            }
        }
    }
    Ok(report)
}

/// Gradient check over every non-frozen parameter of `store`.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let out = f(&mut tape, &bound)?;
    eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut scratch = store.clone();
    scratch.zero_grad();
    tape.accumulate(&grads, &mut scratch);

    let fixed = tape.detached().to_vec();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::replaying(fixed.clone());
        let b = t.bind(s);
        let o = f(&mut t, &b)?;
        eval_scalar(&t, o)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    for id in ids {
        let analytic = scratch.get(id).grad.clone();
        for (k, g_ad) in analytic.into_iter().enumerate() {
            let orig = scratch.get(id).value.data()[k];
            scratch.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(&scratch)?;
            scratch.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(&scratch)?;
            scratch.get_mut(id).value.data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let err = rel_error(g_ad, fd);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((scratch.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
