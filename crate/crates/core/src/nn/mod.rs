//! Hand-rolled neural network components.
//!
//! Everything runs in `f64` on the CPU with explicit forward and backward
//! passes; there is no autodiff. Each layer exposes `forward` plus a
//! `backward` that consumes the forward inputs and the upstream gradient and
//! returns the input gradient alongside parameter gradients, so gradients can
//! flow all the way back to the image when guidance needs them.
//!
//! - [`layers`]: convolution, dense, pooling, and activation primitives.
//! - [`score`]: the conditional noise-prediction network and its trainer.
//! - [`classifier`]: the small CNN classifier, its trainer, and Grad-CAM.

pub mod classifier;
pub mod layers;
pub mod score;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use classifier::{accuracy, argmax, train_classifier, Classifier, ClassifierTrainConfig};
pub use score::{train_score, ScoreNetwork, ScoreTrainConfig};

/// Adam optimizer with one state slot per parameter tensor.
///
/// Slots are allocated on first use; a network must visit its tensors in a
/// fixed order so each keeps its moment estimates across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Advances the shared timestep; call once per batch before `update`.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies one Adam update to the tensor registered at `slot`.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::arg("adam: parameter and gradient sizes differ"));
        }
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; params.len()];
            self.v[slot] = vec![0.0; params.len()];
        }
        if self.m[slot].len() != params.len() {
            return Err(Error::arg("adam: slot reused with a different tensor size"));
        }
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Uniform init in `[-sqrt(3 / fan_in), +sqrt(3 / fan_in)]`.
pub(crate) fn init_uniform(n: usize, fan_in: usize, rng: &mut RngStream) -> Vec<f64> {
    let bound = (3.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| bound * (2.0 * rng.next_uniform() - 1.0))
        .collect()
}

/// Rounds every value to the nearest `f32`, in place.
pub(crate) fn snap_slice_to_f32(data: &mut [f64]) {
    for v in data {
        *v = *v as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With a constant gradient the bias-corrected ratio is g / |g|, so
        // the very first update has magnitude ~lr regardless of scale.
        let mut opt = Adam::new(0.01);
        let mut p = vec![1.0, -2.0];
        opt.begin_step();
        opt.update(0, &mut p, &[250.0, -0.003]).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut opt = Adam::new(0.05);
        let mut p = vec![3.0];
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 1.25)];
            opt.begin_step();
            opt.update(0, &mut p, &g).unwrap();
        }
        assert!((p[0] - 1.25).abs() < 1e-3, "p {}", p[0]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut opt = Adam::new(0.01);
        let mut p = vec![0.0; 3];
        opt.begin_step();
        assert!(opt.update(0, &mut p, &[1.0]).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = RngStream::new(1).split("init", 0);
        let w = init_uniform(1000, 27, &mut rng);
        let bound = (3.0f64 / 27.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(w.iter().any(|v| v.abs() > 0.8 * bound));
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.05 * bound);
    }
}
