//! ADAM with bias correction.

use alloc::string::ToString;
use alloc::vec::Vec;


// Float math for no_std builds; with std linked the inherent methods win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::network::NetworkParameters;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &NetworkParameters<T>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Applies one update; `grads` is aligned with the parameter order.
    ///
    /// Every gradient is validated before anything is modified.
    pub fn step(&mut self, params: &mut NetworkParameters<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            let g = g.as_ref().ok_or_else(|| Error::MissingGradient(name.to_string()))?;
            p.expect_shape("adam gradient", g.shape())?;
        }

        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_ref().expect("validated above");
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi.as_f64();
                let mn = b1 * mi.as_f64() + (1.0 - b1) * gi;
                let vn = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
                *mi = T::from_f64(mn);
                *vi = T::from_f64(vn);
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + eps);
                *pi = T::from_f64(pi.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Scalar>(
    params: &mut NetworkParameters<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use alloc::vec;

    fn single(value: f64) -> NetworkParameters<f64> {
        NetworkParameters::new(vec![(String::from("theta"), Tensor::full(&[3], value))]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, -2.0, 1e4] {
            let mut p = single(1.0);
            let mut s = AdamState::new(&p, AdamConfig::default());
            s.step(&mut p, &[Some(Tensor::full(&[3], g))]).unwrap();
            for &v in p.get("theta").unwrap().data() {
                let step = (v - 1.0).abs();
                assert!((0.000999..=0.001).contains(&step), "g={g}: {step}");
                assert_eq!((v - 1.0).signum(), -g.signum());
            }
            assert_eq!(s.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_never_moves() {
        let mut p = single(0.25);
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..100 {
            s.step(&mut p, &[Some(Tensor::zeros(&[3]))]).unwrap();
        }
        assert_eq!(p.get("theta").unwrap().data(), &[0.25; 3]);
        assert_eq!(s.step_count(), 100);
    }

    #[test]
    fn quadratic_converges_to_minimum() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..20_000 {
            let g = p.get("theta").unwrap().map(|t| 2.0 * (t - 3.0));
            s.step(&mut p, &[Some(g)]).unwrap();
        }
        for &v in p.get("theta").unwrap().data() {
            assert!((v - 3.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn missing_gradient_is_an_error_and_leaves_state_untouched() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(s.step(&mut p, &[None]), Err(Error::MissingGradient(n)) if n == "theta"));
        assert_eq!(s.step_count(), 0);
        assert!(s.step(&mut p, &[Some(Tensor::zeros(&[2]))]).is_err());
        assert_eq!(p.get("theta").unwrap().data(), &[1.0; 3]);
    }
}
