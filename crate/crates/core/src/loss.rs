//! Mean squared and mean absolute error with their gradients.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Which pixel loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean absolute error; its minimiser is the median of the targets.
    L1,
    /// Mean squared error; its minimiser is the mean of the targets.
    L2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

impl core::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            _ => Err(crate::Error::InvalidArgument(alloc::format!("unknown loss `{s}`"))),
        }
    }
}

/// Loss value together with `d loss / d pred`.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// `mean((pred - target)^2)`, gradient `2 (pred - target) / N`.
pub fn loss_l2<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    let residual = pred.zip_map(target, "loss_l2", |p, t| p - t)?;
    let n = residual.len() as f64;
    let value = residual.data().iter().map(|r| r.as_f64() * r.as_f64()).sum::<f64>() / n;
    let k = T::from_f64(2.0 / n);
    Ok(LossOutput {
        value,
        grad: residual.map(|r| r * k),
    })
}

/// `mean(|pred - target|)`, gradient `sign(pred - target) / N` with `sign(0) = 0`.
pub fn loss_l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    let residual = pred.zip_map(target, "loss_l1", |p, t| p - t)?;
    let n = residual.len() as f64;
    let value = residual.data().iter().map(|r| r.as_f64().abs()).sum::<f64>() / n;
    let k = T::from_f64(1.0 / n);
    Ok(LossOutput {
        value,
        grad: residual.map(|r| {
            if r > T::zero() {
                k
            } else if r < T::zero() {
                -k
            } else {
                T::zero()
            }
        }),
    })
}

pub fn loss<T: Scalar>(kind: LossKind, pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    match kind {
        LossKind::L1 => loss_l1(pred, target),
        LossKind::L2 => loss_l2(pred, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn l2_values() {
        assert_eq!(loss_l2(&t(&[1.0, 2.0]), &t(&[1.0, 2.0])).unwrap().value, 0.0);
        assert_eq!(loss_l2(&t(&[1.0, 2.0]), &t(&[0.0, 0.0])).unwrap().value, 2.5);
    }

    #[test]
    fn l1_values() {
        assert_eq!(loss_l1(&t(&[1.0, -3.0]), &t(&[1.0, -3.0])).unwrap().value, 0.0);
        assert_eq!(loss_l1(&t(&[1.0, -3.0]), &t(&[0.0, 0.0])).unwrap().value, 2.0);
        let g = loss_l1(&t(&[1.0, 0.0, -2.0]), &t(&[0.0, 0.0, 0.0])).unwrap().grad;
        assert_eq!(g.data(), &[1.0 / 3.0, 0.0, -1.0 / 3.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(loss_l2(&t(&[1.0, 2.0]), &t(&[1.0])).is_err());
        assert!(loss_l1(&t(&[1.0, 2.0]), &t(&[1.0])).is_err());
    }

    fn fd_check(kind: LossKind, tol: f64) {
        let pred = t(&[0.3, -0.7, 1.1, 0.05, -0.4]);
        let target = t(&[0.1, 0.2, -0.5, 0.6, -0.45]);
        let g = loss(kind, &pred, &target).unwrap().grad;
        let h = 1e-5;
        for i in 0..pred.len() {
            let (mut p, mut m) = (pred.clone(), pred.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (loss(kind, &p, &target).unwrap().value - loss(kind, &m, &target).unwrap().value) / (2.0 * h);
            let rel = (fd - g.data()[i]).abs() / g.data()[i].abs();
            assert!(rel < tol, "{kind:?}[{i}] fd={fd} an={} rel={rel}", g.data()[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(LossKind::L2, 1e-6);
        // Residuals are all at least 0.05 from zero, so no kink is crossed.
        fd_check(LossKind::L1, 1e-6);
    }
}
