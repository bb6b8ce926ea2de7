//! Dense tensors with reverse-mode gradients.
//!
//! Values are `f64`. A [`Tape`] records one computation; parameters live in a
//! [`ParamStore`] and are bound onto a tape per forward pass.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, grad_check_report, GradCheckReport, DEFAULT_EPS};
pub use tape::{cosine, Bound, Grads, Tape, Var, COSINE_EPS, LAYER_NORM_EPS};
pub use tensor::{ParamId, ParamStore, Parameter, Tensor};

pub(crate) use tape::sigmoid_scalar;

/// Logistic function on a plain scalar.
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::eye(2));
        let m = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(mat(&[&[1.0, 0.0]]));
        let b = t.constant(mat(&[&[0.0], &[5.0]]));
        let p = t.matmul(a, b).unwrap();
        assert_eq!(t.value(p).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = t.softmax_rows(x).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);

        let x = t.constant(Tensor::vector(vec![1000.0, 1000.0, 1000.0]));
        let s = t.softmax_rows(x).unwrap();
        for v in t.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[3.0, -1.0, 2.0], &[3.0, -1.0, 2.0]) - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 1.0]) - 0.8).abs() < 1e-8);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let ce = t.cross_entropy(l, 0).unwrap();
        assert!((t.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let l = t.constant(Tensor::vector(vec![100.0, 0.0]));
        let ce = t.cross_entropy(l, 0).unwrap();
        assert!(t.value(ce).item() < 1e-40);

        let l = t.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.cross_entropy(l, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn small_elementwise_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).item(), 0.5);

        let v = t.constant(Tensor::vector(vec![0.3, -2.0, 5.0]));
        let l1 = t.l1_mean(v, v).unwrap();
        assert_eq!(t.value(l1).item(), 0.0);

        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let m = t.mse(a, b).unwrap();
        assert_eq!(t.value(m).item(), 2.5);
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let mut t = Tape::new();
        let x = t.constant(mat(&[&[1.0, 2.0, 3.0, 6.0], &[-1.0, 0.5, 0.0, 4.0]]));
        let g = t.constant(Tensor::full(&[4], 1.0));
        let b = t.constant(Tensor::zeros(&[4]));
        let y = t.layer_norm(x, g, b).unwrap();
        for row in t.value(y).rows() {
            let mu = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 4.0;
            assert!(mu.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gradient_accumulates_across_uses() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0]), true);
        let y = t.add(x, x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn quadratic_grad_check() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut t = Tape::new();
        let v = t.leaf(x.clone(), true);
        let sq = t.mul(v, v).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &[2.0, 4.0]);
        let err = grad_check(
            &[x],
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_reports_operation() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0]));
        match t.sqrt(x) {
            Err(Error::Numeric { op }) => assert_eq!(op, "sqrt"),
            other => panic!("{other:?}"),
        }
    }
}
