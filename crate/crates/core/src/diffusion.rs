//! Forward noising and deterministic DDIM stepping in both directions.
//!
//! Both the denoise step and the inversion step are the same two-term
//! update around the clean-image estimate:
//!
//! ```text
//! x_target = sqrt(a_target) * x0_est
//!          + sqrt(1 - a_target - sigma^2) * eps_hat
//!          + sigma * noise
//! x0_est   = (x_source - sqrt(1 - a_source) * eps_hat) / sqrt(a_source)
//! ```
//!
//! Denoising moves to a smaller timestep, inversion to a larger one with
//! `sigma = 0`. With the noise prediction frozen, the two directions are exact
//! inverses of each other.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::ClassId;

/// Anything that predicts the noise component of a noisy image.
///
/// `y = None` means unconditional: a conditional network substitutes its
/// learned null-label embedding, an unconditional one ignores the argument.
pub trait NoisePredictor {
    fn predict_noise(&self, x: &Image, t: usize, y: Option<ClassId>) -> Result<Image>;
}

/// Sampler options. `eta = 0` (the default) makes every step deterministic;
/// `eta > 0` blends in fresh noise with the usual DDIM variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub eta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { eta: 0.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::config(alloc::format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.eta == 0.0
    }

    /// Per-step noise scale for the move `t -> t_prev`.
    pub fn sigma(&self, schedule: &NoiseSchedule, t: usize, t_prev: usize) -> f64 {
        if self.eta == 0.0 {
            return 0.0;
        }
        let a_t = schedule.alpha(t);
        let a_prev = schedule.alpha(t_prev);
        self.eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
    }
}

fn check_t(t: usize, schedule: &NoiseSchedule, what: &str) -> Result<()> {
    if t > schedule.t_max() {
        return Err(Error::arg(alloc::format!(
            "{what}: timestep {t} exceeds schedule length {}",
            schedule.t_max()
        )));
    }
    Ok(())
}

/// Forward marginal: `x_t = sqrt(alpha_t) x_0 + sqrt(1 - alpha_t) noise`.
pub fn forward_diffuse(
    x0: &Image,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &Image,
) -> Result<Image> {
    x0.check_same_shape(noise, "forward_diffuse")?;
    check_t(t, schedule, "forward_diffuse")?;
    Ok(Image::lin_comb(
        x0,
        schedule.sqrt_alpha(t),
        noise,
        schedule.sqrt_one_minus_alpha(t),
    ))
}

/// Clean-image estimate `(x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t)`.
///
/// Exact left inverse of [`forward_diffuse`] when given the same noise.
pub fn estimate_x0(x_t: &Image, eps: &Image, t: usize, schedule: &NoiseSchedule) -> Result<Image> {
    x_t.check_same_shape(eps, "estimate_x0")?;
    check_t(t, schedule, "estimate_x0")?;
    let sa = schedule.sqrt_alpha(t);
    let s1ma = schedule.sqrt_one_minus_alpha(t);
    Ok(Image::lin_comb(x_t, 1.0 / sa, eps, -s1ma / sa))
}

/// The shared step kernel; see the module docs. `noise` is required exactly
/// when `sigma != 0`.
pub fn ddim_step_formula(
    x_source: &Image,
    eps_hat: &Image,
    alpha_source: f64,
    alpha_target: f64,
    sigma: f64,
    noise: Option<&Image>,
) -> Result<Image> {
    x_source.check_same_shape(eps_hat, "ddim step")?;
    let residual = 1.0 - alpha_target - sigma * sigma;
    if residual < 0.0 {
        return Err(Error::arg(alloc::format!(
            "sigma^2 = {} exceeds 1 - alpha_target = {}",
            sigma * sigma,
            1.0 - alpha_target
        )));
    }
    let sa_src = alpha_source.sqrt();
    let s1ma_src = (1.0 - alpha_source).sqrt();
    let sa_tgt = alpha_target.sqrt();
    // x0_est folded in: sa_tgt/sa_src * x_source + (dir - sa_tgt*s1ma_src/sa_src) * eps.
    let mut out = Image::lin_comb(
        x_source,
        sa_tgt / sa_src,
        eps_hat,
        residual.sqrt() - sa_tgt * s1ma_src / sa_src,
    );
    if sigma != 0.0 {
        let noise = noise.ok_or_else(|| Error::arg("stochastic step requires a noise image"))?;
        x_source.check_same_shape(noise, "ddim step noise")?;
        out.add_scaled(noise, sigma);
    }
    Ok(out)
}

/// One deterministic-or-stochastic denoise step `t -> t_prev` (`t_prev < t`).
pub fn ddim_denoise_step(
    x_t: &Image,
    eps_hat: &Image,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    noise: Option<&Image>,
) -> Result<Image> {
    cfg.validate()?;
    check_t(t, schedule, "ddim_denoise_step")?;
    if t_prev >= t {
        return Err(Error::arg(alloc::format!(
            "denoise step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    let sigma = cfg.sigma(schedule, t, t_prev);
    ddim_step_formula(
        x_t,
        eps_hat,
        schedule.alpha(t),
        schedule.alpha(t_prev),
        sigma,
        noise,
    )
}

/// One inversion step `t -> t_next` (`t_next > t`). Inversion is only defined
/// for the deterministic sampler.
pub fn ddim_invert_step(
    x_t: &Image,
    eps_hat: &Image,
    t: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Image> {
    cfg.validate()?;
    if !cfg.is_deterministic() {
        return Err(Error::arg(
            "inversion requires the deterministic sampler (eta = 0)",
        ));
    }
    check_t(t_next, schedule, "ddim_invert_step")?;
    if t_next <= t {
        return Err(Error::arg(alloc::format!(
            "invert step needs t_next > t, got {t_next} <= {t}"
        )));
    }
    ddim_step_formula(
        x_t,
        eps_hat,
        schedule.alpha(t),
        schedule.alpha(t_next),
        0.0,
        None,
    )
}

fn check_tau(tau_steps: &[usize], schedule: &NoiseSchedule) -> Result<()> {
    if tau_steps.is_empty() {
        return Err(Error::arg("tau subsequence is empty"));
    }
    if tau_steps[0] == 0 || *tau_steps.last().unwrap() > schedule.t_max() {
        return Err(Error::arg(alloc::format!(
            "tau must lie within 1..={}",
            schedule.t_max()
        )));
    }
    if !tau_steps.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::arg("tau must be strictly increasing"));
    }
    Ok(())
}

/// Walks `x_0` up the chain along `tau_steps`, calling `monitor` after every
/// step with `(t, x_t, x0_est)`. Stops early when the monitor returns `true`.
/// Returns the final latent and the timestep it belongs to.
///
/// The network is evaluated at the source timestep of each step (clamped to 1
/// for the first hop out of `t = 0`); the extra evaluation at the final point
/// feeds the monitor's clean-image estimate.
pub fn invert_trajectory_with<N, F>(
    x0: &Image,
    net: &N,
    y: Option<ClassId>,
    schedule: &NoiseSchedule,
    tau_steps: &[usize],
    cfg: &SamplerConfig,
    mut monitor: F,
) -> Result<(Image, usize)>
where
    N: NoisePredictor + ?Sized,
    F: FnMut(usize, &Image, &Image) -> Result<bool>,
{
    check_tau(tau_steps, schedule)?;
    let mut x = x0.clone();
    let mut t = 0usize;
    let mut eps = net.predict_noise(&x, 1, y)?;
    for &t_next in tau_steps {
        x = ddim_invert_step(&x, &eps, t, t_next, schedule, cfg)?;
        t = t_next;
        eps = net.predict_noise(&x, t, y)?;
        let x0_est = estimate_x0(&x, &eps, t, schedule)?;
        if monitor(t, &x, &x0_est)? {
            break;
        }
    }
    Ok((x, t))
}

/// Plain full inversion along `tau_steps`; returns the latent at the last
/// element.
pub fn invert_trajectory<N>(
    x0: &Image,
    net: &N,
    y: Option<ClassId>,
    schedule: &NoiseSchedule,
    tau_steps: &[usize],
    cfg: &SamplerConfig,
) -> Result<Image>
where
    N: NoisePredictor + ?Sized,
{
    let (latent, _) = invert_trajectory_with(x0, net, y, schedule, tau_steps, cfg, |_, _, _| {
        Ok(false)
    })?;
    Ok(latent)
}

/// Walks a latent at `t_start` down to a clean image along `tau_steps`.
///
/// `t_start` must be 0 (in which case the input is returned unchanged) or an
/// element of `tau_steps`. `guidance` supplies the full noise prediction for
/// each step; identity guidance is `|x, t| net.predict_noise(x, t, y)`.
/// `noise_rng` is consulted only when `cfg.eta > 0`.
pub fn sample_trajectory<F>(
    x_start: &Image,
    t_start: usize,
    schedule: &NoiseSchedule,
    tau_steps: &[usize],
    cfg: &SamplerConfig,
    mut guidance: F,
    mut noise_rng: Option<&mut RngStream>,
) -> Result<Image>
where
    F: FnMut(&Image, usize) -> Result<Image>,
{
    check_tau(tau_steps, schedule)?;
    cfg.validate()?;
    if t_start == 0 {
        return Ok(x_start.clone());
    }
    let start_idx = tau_steps
        .iter()
        .position(|&t| t == t_start)
        .ok_or_else(|| Error::arg(alloc::format!("t_start {t_start} is not in tau")))?;
    // Descending targets: the tau elements below t_start, then 0.
    let mut targets: Vec<usize> = tau_steps[..start_idx].iter().rev().copied().collect();
    targets.push(0);

    let mut x = x_start.clone();
    let mut t = t_start;
    for t_prev in targets {
        let eps_hat = guidance(&x, t)?;
        let noise = if cfg.sigma(schedule, t, t_prev) != 0.0 {
            let rng = noise_rng
                .as_deref_mut()
                .ok_or_else(|| Error::arg("eta > 0 sampling requires an rng stream"))?;
            Some(x.noise_like(rng))
        } else {
            None
        };
        x = ddim_denoise_step(&x, &eps_hat, t, t_prev, schedule, cfg, noise.as_ref())?;
        t = t_prev;
    }
    Ok(x)
}
