//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    /// Number of applied steps.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// What happened in [`Adam::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was not finite; nothing changed.
    Skipped { param: String, index: usize },
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.values().iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Checks that the moments line up with `store`.
    pub fn check(&self, store: &ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        for ((m, v), p) in self.m.iter().zip(&self.v).zip(store.values()) {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: m.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// One update from the gradients stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<StepOutcome> {
        self.check(store)?;
        for (i, g) in store.grads().iter().enumerate() {
            if let Some((index, _)) = g.first_non_finite() {
                let param = store.names()[i].clone();
                log::warn!("skipping optimizer step: non-finite gradient in {param}[{index}]");
                return Ok(StepOutcome::Skipped { param, index });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
        for (((p, g), m), v) in store.values_and_grads_mut().zip(&mut self.m).zip(&mut self.v) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(vec![v.len()], v).unwrap()).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: &[f64]) {
        // route through a tape so the store's own accumulation path is used
        let mut tape = crate::autodiff::Tape::new();
        let b = s.bind(&mut tape, true);
        let c = tape.constant(Tensor::from_f64(vec![g.len()], g).unwrap());
        let prod = tape.mul(b.get(crate::nn::params::ParamId(0)), c).unwrap();
        let l = tape.sum(prod);
        tape.backward(l).unwrap();
        s.zero_grads();
        s.accumulate_grads(&tape, &b);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        set_grad(&mut s, &[0.5, 0.5]);
        opt.step(&mut s).unwrap();
        let after_one = s.values()[0].clone();
        let m1 = opt.m[0].data()[0];
        set_grad(&mut s, &[0.0, 0.0]);
        opt.step(&mut s).unwrap();
        assert!((opt.m[0].data()[0] - 0.9 * m1).abs() < 1e-15);
        // with zero gradient the update is driven by decayed moments only
        assert_ne!(s.values()[0], after_one);
        let mut s = store(&[1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        set_grad(&mut s, &[0.0, 0.0]);
        opt.step(&mut s).unwrap();
        assert_eq!(s.values()[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_calculation() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut s = store(&[1.0, 1.0]);
        let mut opt = Adam::new(cfg, &s);
        set_grad(&mut s, &[0.2, -3.0]);
        opt.step(&mut s).unwrap();
        for (i, g) in [0.2f64, -3.0].into_iter().enumerate() {
            let m = 0.1 * g;
            let v = 0.001 * g * g;
            let (mh, vh) = (m / 0.1, v / 0.001);
            let expect = 1.0 - 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((s.values()[0].data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let g = 0.7;
        let mut s = store(&[0.5]);
        let mut opt = Adam::new(cfg, &s);
        for _ in 0..2 {
            set_grad(&mut s, &[g]);
            opt.step(&mut s).unwrap();
        }
        // closed form for a constant gradient: m_t = (1-β1^t) g, v_t = (1-β2^t) g²
        // so every bias-corrected step is lr · g / (|g| + eps)
        let step = 0.01 * g / (g.abs() + 1e-8);
        assert!((s.values()[0].data()[0] - (0.5 - 2.0 * step)).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut s = store(&[1.0]);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        set_grad(&mut s, &[f64::NAN]);
        let out = opt.step(&mut s).unwrap();
        assert!(matches!(out, StepOutcome::Skipped { .. }));
        assert_eq!(s.values()[0].data(), &[1.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_identity() {
        let mut s = store(&[0.123456789, -9.87654321]);
        let before = s.values()[0].clone();
        let mut opt = Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &s);
        for _ in 0..3 {
            set_grad(&mut s, &[1.5, -0.25]);
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.values()[0], before);
    }
}
