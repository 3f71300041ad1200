//! AdamW with decoupled weight decay and bias-corrected moments.

use ndarray::ArrayD;

use super::params::{s as sc, ParamVisit, Scalar};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Optimizer state; moments are allocated lazily on the first step and
/// keyed by the stable block order of [`ParamVisit`].
pub struct AdamW<F> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    step_count: u64,
    moments: Vec<(ArrayD<F>, ArrayD<F>)>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter block. The update depends only on
    /// the accumulated gradient, so any batch composition producing the
    /// same summed gradient yields the same step. Non-finite gradients
    /// abort with the offending block named.
    pub fn step<M: ParamVisit<F>>(&mut self, params: &mut M, grads: &M) -> Result<()> {
        let grad_blocks = grads.blocks();
        for (name, g) in &grad_blocks {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        if self.moments.is_empty() {
            self.moments = grad_blocks
                .iter()
                .map(|(_, g)| (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())))
                .collect();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1: F = sc(ADAM_BETA1);
        let b2: F = sc(ADAM_BETA2);
        let eps: F = sc(ADAM_EPSILON);
        let lr: F = sc(self.learning_rate);
        let decay: F = sc(self.weight_decay);
        let bias1 = F::one() - b1.powi(t);
        let bias2 = F::one() - b2.powi(t);

        for (((_, mut p), (_, g)), (m, v)) in params
            .blocks_mut()
            .into_iter()
            .zip(grad_blocks)
            .zip(self.moments.iter_mut())
        {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + decay * *p);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::params::Linear;
    use ndarray::{Array1, Array2};

    fn tiny_model() -> Linear<f64> {
        Linear {
            w: Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 0.5, 3.0]).unwrap(),
            b: Array1::from_vec(vec![0.1, -0.1]),
        }
    }

    #[test]
    fn zero_gradients_without_decay_leave_params_unchanged() {
        let mut model = tiny_model();
        let before = model.clone();
        let grads = model.zeros_like();
        let mut opt = AdamW::new(5e-5, 0.0);
        opt.step(&mut model, &grads).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn zero_gradients_with_decay_shrink_params_elementwise() {
        let mut model = tiny_model();
        let before = model.clone();
        let grads = model.zeros_like();
        let (lr, lambda) = (1e-2, 0.1);
        let mut opt = AdamW::new(lr, lambda);
        opt.step(&mut model, &grads).unwrap();
        for (after, before) in model.w.iter().zip(before.w.iter()) {
            let expected = before - lr * lambda * before;
            assert!((after - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_quadratic_descends_monotonically() {
        // f(w) = w^2, started at w = 1: w must decrease toward 0.
        let mut model = Linear {
            w: Array2::from_shape_vec((1, 1), vec![1.0f64]).unwrap(),
            b: Array1::zeros(0),
        };
        // Adam's step magnitude approaches the learning rate for a
        // constant-sign gradient, so 40 steps at 2e-2 stay inside (0, 1).
        let mut opt = AdamW::new(2e-2, 0.0);
        let mut prev = 1.0f64;
        for _ in 0..40 {
            let grads = Linear {
                w: Array2::from_shape_vec((1, 1), vec![2.0 * model.w[(0, 0)]]).unwrap(),
                b: Array1::zeros(0),
            };
            opt.step(&mut model, &grads).unwrap();
            let now = model.w[(0, 0)];
            assert!(now < prev, "w did not decrease: {now} vs {prev}");
            assert!(now > 0.0, "overshot below zero");
            prev = now;
        }
        assert!(prev < 0.4);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut model = tiny_model();
        let mut grads = model.zeros_like();
        grads.w[(0, 0)] = f64::NAN;
        let mut opt = AdamW::new(1e-3, 0.0);
        match opt.step(&mut model, &grads).unwrap_err() {
            Error::NonFiniteGradient(name) => assert_eq!(name, "w"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn identical_summed_gradients_give_identical_updates() {
        let grads = Linear {
            w: Array2::from_shape_vec((2, 2), vec![0.3, -0.7, 0.2, 0.9]).unwrap(),
            b: Array1::from_vec(vec![0.05, -0.04]),
        };
        let mut m1 = tiny_model();
        let mut m2 = tiny_model();
        let mut o1 = AdamW::new(1e-3, 0.01);
        let mut o2 = AdamW::new(1e-3, 0.01);
        o1.step(&mut m1, &grads).unwrap();
        o2.step(&mut m2, &grads).unwrap();
        assert_eq!(m1, m2);
    }
}
