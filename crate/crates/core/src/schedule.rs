//! Cumulative noise schedules and timestep subsequences.
//!
//! The schedule stores the cumulative signal coefficient `alpha(t)` (the
//! product of per-step keep probabilities), with `alpha(0) = 1` by convention.
//! The forward marginal at step `t` is
//! `x_t = sqrt(alpha(t)) * x_0 + sqrt(1 - alpha(t)) * noise`,
//! so `alpha` must be strictly decreasing and stay in `(0, 1]`.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

/// Available schedule constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Per-step beta interpolated linearly. The endpoints are the standard
    /// [1e-4, 0.02] at T = 1000 and scale with 1000/T (clamped below 0.999)
    /// so that total accumulated noise is comparable at any T.
    Linear,
    /// Squared-cosine cumulative alpha with the usual 0.008 offset.
    Cosine,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::config(alloc::format!(
                "unknown schedule kind '{other}' (expected linear or cosine)"
            ))),
        }
    }
}

/// Precomputed cumulative schedule over timesteps `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    /// `alpha[t]` for `t` in `0..=T`; `alpha[0] = 1`.
    alpha: Vec<f64>,
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 0.02;
const REFERENCE_T: f64 = 1000.0;
const BETA_MAX: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

/// Builds a schedule with `t_max` steps. Requires `t_max >= 2`.
pub fn make_schedule(t_max: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t_max < 2 {
        return Err(Error::config(alloc::format!(
            "schedule needs at least 2 steps, got {t_max}"
        )));
    }
    let mut alpha = Vec::with_capacity(t_max + 1);
    alpha.push(1.0);
    match kind {
        ScheduleKind::Linear => {
            let scale = REFERENCE_T / t_max as f64;
            let b0 = (LINEAR_BETA_START * scale).min(BETA_MAX);
            let b1 = (LINEAR_BETA_END * scale).min(BETA_MAX);
            let mut acc = 1.0;
            for i in 0..t_max {
                let frac = i as f64 / (t_max - 1) as f64;
                let beta = b0 + (b1 - b0) * frac;
                acc *= 1.0 - beta;
                alpha.push(acc);
            }
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let v = ((t / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET))
                    * core::f64::consts::FRAC_PI_2;
                v.cos() * v.cos()
            };
            let mut acc = 1.0;
            for t in 1..=t_max {
                // Ratios telescope to f(t)/f(0); clamping each one bounds the
                // per-step beta away from 1 near the tail.
                let ratio = (f(t as f64) / f(t as f64 - 1.0)).max(1.0 - BETA_MAX);
                acc *= ratio;
                alpha.push(acc);
            }
        }
    }
    Ok(NoiseSchedule { kind, alpha })
}

impl NoiseSchedule {
    /// Number of steps `T`.
    pub fn t_max(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Cumulative signal coefficient at `t`; `t` must lie in `0..=T`.
    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `sqrt(alpha(t))`.
    #[inline]
    pub fn sqrt_alpha(&self, t: usize) -> f64 {
        self.alpha[t].sqrt()
    }

    /// `sqrt(1 - alpha(t))`.
    #[inline]
    pub fn sqrt_one_minus_alpha(&self, t: usize) -> f64 {
        (1.0 - self.alpha[t]).sqrt()
    }
}

/// Uniform-stride subsequence of `1..=T` with `len` elements, ending at `T`.
///
/// Element `i` (1-based) is `round(T * i / len)`; with `len <= T` the result
/// is strictly increasing.
pub fn tau(schedule: &NoiseSchedule, len: usize) -> Result<Vec<usize>> {
    let t_max = schedule.t_max();
    if len == 0 || len > t_max {
        return Err(Error::config(alloc::format!(
            "tau length must lie in 1..={t_max}, got {len}"
        )));
    }
    let out: Vec<usize> = (1..=len)
        .map(|i| (t_max as f64 * i as f64 / len as f64).round() as usize)
        .collect();
    debug_assert!(out.windows(2).all(|w| w[0] < w[1]));
    debug_assert_eq!(*out.last().unwrap(), t_max);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_valid(s: &NoiseSchedule) {
        assert_eq!(s.alpha(0), 1.0);
        for t in 1..=s.t_max() {
            let a = s.alpha(t);
            assert!(a > 0.0 && a <= 1.0, "alpha({t}) = {a} out of range");
            assert!(a < s.alpha(t - 1), "alpha not strictly decreasing at {t}");
        }
    }

    #[test]
    fn linear_at_reference_t_uses_standard_betas() {
        let s = make_schedule(1000, ScheduleKind::Linear).unwrap();
        assert_valid(&s);
        // First step keeps 1 - 1e-4 of the signal.
        assert!((s.alpha(1) - (1.0 - 1e-4)).abs() < 1e-12);
        assert!(s.alpha(1) > 0.99);
        assert!(s.alpha(1000) < 0.05);
    }

    #[test]
    fn linear_fully_noises_at_small_t() {
        for t_max in [2usize, 50, 200] {
            let s = make_schedule(t_max, ScheduleKind::Linear).unwrap();
            assert_valid(&s);
            assert!(
                s.alpha(t_max) < 0.05,
                "alpha({t_max}) = {} not small",
                s.alpha(t_max)
            );
        }
    }

    #[test]
    fn cosine_is_valid() {
        for t_max in [2usize, 100, 1000] {
            let s = make_schedule(t_max, ScheduleKind::Cosine).unwrap();
            assert_valid(&s);
        }
    }

    #[test]
    fn too_few_steps_is_a_config_error() {
        for t_max in [0usize, 1] {
            let err = make_schedule(t_max, ScheduleKind::Linear).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
    }

    #[test]
    fn tau_has_uniform_stride_and_ends_at_t() {
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let seq = tau(&s, 10).unwrap();
        assert_eq!(seq, alloc::vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
        assert_eq!(tau(&s, 1).unwrap(), alloc::vec![100]);
        let full = tau(&s, 100).unwrap();
        assert_eq!(full.len(), 100);
        assert_eq!(full[0], 1);
    }

    #[test]
    fn tau_rejects_bad_lengths() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        assert!(matches!(tau(&s, 0), Err(Error::Config(_))));
        assert!(matches!(tau(&s, 51), Err(Error::Config(_))));
    }
}
