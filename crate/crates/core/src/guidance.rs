//! Guidance terms that steer re-synthesis toward a target class.
//!
//! Two families are provided:
//!
//! - Classifier guidance: the predicted noise is shifted against the
//!   gradient of a classifier's log-probability. The gradient is taken on
//!   the clean estimate `x0_hat` (optionally on the raw noisy input as an
//!   ablation), averaged over several random cutouts so no single region
//!   dominates, and chained back to the noisy input either through a scaled
//!   identity or through the full Jacobian of the noise prediction.
//! - Classifier-free guidance: a weighted extrapolation from the
//!   unconditional to the conditional noise prediction, optionally restricted
//!   to a spatial mask (from Grad-CAM) so guidance only acts where the
//!   classifier found its evidence.

use alloc::vec::Vec;

use crate::diffusion::estimate_x0;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::classifier::Classifier;
use crate::nn::score::ScoreNetwork;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::ClassId;

/// Direction of the classifier-guidance shift. [`GradSign::Subtract`] is the
/// standard form; [`GradSign::Add`] is exposed for sign ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSign {
    Subtract,
    Add,
}

impl Default for GradSign {
    fn default() -> Self {
        GradSign::Subtract
    }
}

impl GradSign {
    pub fn name(self) -> &'static str {
        match self {
            GradSign::Subtract => "subtract",
            GradSign::Add => "add",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "subtract" => Ok(GradSign::Subtract),
            "add" => Ok(GradSign::Add),
            other => Err(Error::config(alloc::format!(
                "unknown gradient sign '{other}' (expected subtract or add)"
            ))),
        }
    }
}

/// Applies classifier guidance to a noise prediction:
/// `eps_guided = eps -+ scale * sqrt(1 - alpha_t) * grad_log_p`.
pub fn classifier_guided_eps(
    eps: &Image,
    grad_log_p: &Image,
    t: usize,
    schedule: &NoiseSchedule,
    scale: f64,
    sign: GradSign,
) -> Result<Image> {
    eps.check_same_shape(grad_log_p, "classifier_guided_eps")?;
    if t > schedule.t_max() {
        return Err(Error::arg(alloc::format!(
            "timestep {t} beyond schedule end {}",
            schedule.t_max()
        )));
    }
    let k = scale * schedule.sqrt_one_minus_alpha(t);
    let signed = match sign {
        GradSign::Subtract => -k,
        GradSign::Add => k,
    };
    Ok(Image::lin_comb(eps, 1.0, grad_log_p, signed))
}

/// How the clean-estimate gradient is chained back to the noisy input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    /// Treat the noise prediction as constant: divide by `sqrt(alpha_t)`.
    ScaledIdentity,
    /// Differentiate through the noise prediction as well (one extra
    /// backward pass through the score network per call).
    Full,
}

impl ChainMode {
    pub fn name(self) -> &'static str {
        match self {
            ChainMode::ScaledIdentity => "scaled-identity",
            ChainMode::Full => "full",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "scaled-identity" => Ok(ChainMode::ScaledIdentity),
            "full" => Ok(ChainMode::Full),
            other => Err(Error::config(alloc::format!(
                "unknown chain mode '{other}' (expected scaled-identity or full)"
            ))),
        }
    }
}

/// Where the classifier gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradInput {
    /// On the clean estimate `x0_hat` (the default).
    Xhat0,
    /// Directly on the noisy input, as an ablation.
    RawXt,
}

impl GradInput {
    pub fn name(self) -> &'static str {
        match self {
            GradInput::Xhat0 => "xhat0",
            GradInput::RawXt => "raw-xt",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "xhat0" => Ok(GradInput::Xhat0),
            "raw-xt" => Ok(GradInput::RawXt),
            other => Err(Error::config(alloc::format!(
                "unknown gradient input '{other}' (expected xhat0 or raw-xt)"
            ))),
        }
    }
}

/// Options for [`classifier_score_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanGradConfig {
    /// Number of random cutout views averaged per call.
    pub cutouts: usize,
    /// Side length of the square hole, in pixels. Zero disables the cutout:
    /// every view is the un-augmented image.
    pub hole_side: usize,
    /// Intensity pasted into the hole (typically the train-set mean).
    pub fill: f64,
    pub chain: ChainMode,
    pub input: GradInput,
}

impl Default for CleanGradConfig {
    fn default() -> Self {
        CleanGradConfig {
            cutouts: 4,
            hole_side: 4,
            fill: 0.5,
            chain: ChainMode::ScaledIdentity,
            input: GradInput::Xhat0,
        }
    }
}

impl CleanGradConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.cutouts == 0 {
            return Err(Error::config("cutouts must be >= 1"));
        }
        if self.hole_side > height || self.hole_side > width {
            return Err(Error::config(alloc::format!(
                "hole side {} does not fit a {height}x{width} image",
                self.hole_side
            )));
        }
        Ok(())
    }
}

/// Draws `count` top-left hole corners uniformly over all valid positions.
/// A zero `hole_side` is allowed; such holes cover no pixels.
pub fn draw_holes(
    count: usize,
    hole_side: usize,
    height: usize,
    width: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    if hole_side > height || hole_side > width {
        return Err(Error::arg(alloc::format!(
            "hole side {hole_side} does not fit a {height}x{width} image"
        )));
    }
    let rows = (height - hole_side + 1) as u64;
    let cols = (width - hole_side + 1) as u64;
    Ok((0..count)
        .map(|_| {
            let y = rng.next_below(rows) as usize;
            let x = rng.next_below(cols) as usize;
            (y, x)
        })
        .collect())
}

/// Returns a copy of `x` with a `hole_side`-square at `corner` replaced by
/// `fill`, across all channels.
pub fn apply_cutout(x: &Image, corner: (usize, usize), hole_side: usize, fill: f64) -> Image {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let ch = out.channel_mut(c);
        for dy in 0..hole_side {
            let row = (corner.0 + dy) * x.width();
            for dx in 0..hole_side {
                ch[row + corner.1 + dx] = fill;
            }
        }
    }
    out
}

fn zero_hole(grad: &mut Image, corner: (usize, usize), hole_side: usize) {
    let w = grad.width();
    for c in 0..grad.channels() {
        let ch = grad.channel_mut(c);
        for dy in 0..hole_side {
            let row = (corner.0 + dy) * w;
            for dx in 0..hole_side {
                ch[row + corner.1 + dx] = 0.0;
            }
        }
    }
}

/// Gradient of the classifier's `log p(y | .)` with respect to the noisy
/// input `x_t`, evaluated through the clean estimate.
///
/// The clean estimate `x0_hat` is formed from `x_t` and the caller's noise
/// prediction `eps_hat`. For each of `cfg.cutouts` random square holes the
/// classifier gradient is taken on the cutout view; since the hole pixels are
/// constants, their gradient entries are zeroed before averaging. The
/// averaged gradient is then mapped back to `x_t` space per `cfg.chain`;
/// [`ChainMode::Full`] additionally needs `score` and the conditioning label
/// `cond` that produced `eps_hat`.
#[allow(clippy::too_many_arguments)]
pub fn classifier_score_grad(
    classifier: &Classifier,
    score: Option<(&ScoreNetwork, Option<ClassId>)>,
    x_t: &Image,
    eps_hat: &Image,
    t: usize,
    y: ClassId,
    schedule: &NoiseSchedule,
    cfg: &CleanGradConfig,
    rng: &mut RngStream,
) -> Result<Image> {
    cfg.validate(x_t.height(), x_t.width())?;
    let target = match cfg.input {
        GradInput::Xhat0 => estimate_x0(x_t, eps_hat, t, schedule)?,
        GradInput::RawXt => x_t.clone(),
    };
    let holes = draw_holes(cfg.cutouts, cfg.hole_side, x_t.height(), x_t.width(), rng)?;
    let mut mean_grad = Image::zeros(x_t.channels(), x_t.height(), x_t.width());
    for corner in holes {
        let view = apply_cutout(&target, corner, cfg.hole_side, cfg.fill);
        let mut g = classifier.input_log_prob_grad(&view, y)?;
        zero_hole(&mut g, corner, cfg.hole_side);
        mean_grad.add_scaled(&g, 1.0 / cfg.cutouts as f64);
    }
    match cfg.input {
        GradInput::RawXt => Ok(mean_grad),
        GradInput::Xhat0 => {
            let sa = schedule.sqrt_alpha(t);
            match cfg.chain {
                ChainMode::ScaledIdentity => {
                    mean_grad.scale(1.0 / sa);
                    Ok(mean_grad)
                }
                ChainMode::Full => {
                    let (net, cond) = score.ok_or_else(|| {
                        Error::arg("full chain mode needs the score network and its conditioning")
                    })?;
                    let jt_g = net.vjp_input(x_t, t, cond, &mean_grad)?;
                    let s1ma = schedule.sqrt_one_minus_alpha(t);
                    Ok(Image::lin_comb(&mean_grad, 1.0 / sa, &jt_g, -s1ma / sa))
                }
            }
        }
    }
}

/// Classifier-free guidance:
/// `eps = eps_uncond + omega * (eps_cond - eps_uncond)`.
pub fn cfg_eps(eps_uncond: &Image, eps_cond: &Image, omega: f64) -> Result<Image> {
    eps_uncond.check_same_shape(eps_cond, "cfg_eps")?;
    Ok(Image::lin_comb(eps_uncond, 1.0 - omega, eps_cond, omega))
}

/// Classifier-free guidance restricted to a spatial mask: outside the mask
/// the unconditional prediction passes through untouched. `mask` has one
/// channel and is broadcast across the prediction's channels.
pub fn masked_cfg_eps(
    eps_uncond: &Image,
    eps_cond: &Image,
    omega: f64,
    mask: &Image,
) -> Result<Image> {
    eps_uncond.check_same_shape(eps_cond, "masked_cfg_eps")?;
    if mask.channels() != 1
        || mask.height() != eps_uncond.height()
        || mask.width() != eps_uncond.width()
    {
        return Err(Error::arg(alloc::format!(
            "mask shape {:?} does not broadcast over prediction shape {:?}",
            mask.shape(),
            eps_uncond.shape()
        )));
    }
    let mut out = eps_uncond.clone();
    let m = mask.channel(0);
    for c in 0..out.channels() {
        let ch = out.channel_mut(c);
        let cond_ch = eps_cond.channel(c);
        let unc_ch = eps_uncond.channel(c);
        for i in 0..ch.len() {
            ch[i] = unc_ch[i] + omega * m[i] * (cond_ch[i] - unc_ch[i]);
        }
    }
    Ok(out)
}

/// Binarizes an attribution map: 1 where `cam >= cutpoint`, else 0.
pub fn cam_mask(cam: &Image, cutpoint: f64) -> Result<Image> {
    if cam.channels() != 1 {
        return Err(Error::arg("cam_mask expects a single-channel map"));
    }
    if !(0.0..=1.0).contains(&cutpoint) {
        return Err(Error::config(alloc::format!(
            "cutpoint {cutpoint} outside [0, 1]"
        )));
    }
    let mut out = cam.clone();
    for v in out.as_mut_slice() {
        *v = if *v >= cutpoint { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Which conditioning family a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    /// Classifier guidance: unconditional noise prediction shifted by a
    /// classifier gradient taken on the clean estimate.
    Classifier,
    /// Classifier-free guidance: extrapolation from the unconditional to the
    /// label-conditioned noise prediction, optionally masked by a CAM.
    ClassifierFree,
}

impl GuidanceMode {
    pub fn name(&self) -> &'static str {
        match self {
            GuidanceMode::Classifier => "classifier",
            GuidanceMode::ClassifierFree => "classifier_free",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(GuidanceMode::Classifier),
            "classifier_free" => Ok(GuidanceMode::ClassifierFree),
            other => Err(Error::config(alloc::format!(
                "unknown guidance mode '{other}' (expected classifier or classifier_free)"
            ))),
        }
    }
}

/// Every knob of the conditioning step, for both guidance families.
///
/// `scale`, `sign`, and `clean_grad` drive the classifier path; `omega` and
/// `cam_cutpoint` drive the classifier-free path. A cut-point of zero keeps
/// the whole image in play (plain classifier-free guidance, no CAM needed);
/// a positive cut-point restricts guidance to the thresholded CAM region.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub scale: f64,
    pub sign: GradSign,
    pub clean_grad: CleanGradConfig,
    pub omega: f64,
    pub cam_cutpoint: f64,
}

impl GuidanceConfig {
    pub fn classifier(scale: f64) -> Self {
        GuidanceConfig {
            mode: GuidanceMode::Classifier,
            scale,
            sign: GradSign::default(),
            clean_grad: CleanGradConfig::default(),
            omega: 0.0,
            cam_cutpoint: 0.0,
        }
    }

    pub fn classifier_free(omega: f64, cam_cutpoint: f64) -> Self {
        GuidanceConfig {
            mode: GuidanceMode::ClassifierFree,
            scale: 0.0,
            sign: GradSign::default(),
            clean_grad: CleanGradConfig::default(),
            omega,
            cam_cutpoint,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::config(alloc::format!(
                "guidance scale {} must be finite and >= 0",
                self.scale
            )));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::config(alloc::format!(
                "guidance omega {} must be finite and >= 0",
                self.omega
            )));
        }
        if !(0.0..=1.0).contains(&self.cam_cutpoint) {
            return Err(Error::config(alloc::format!(
                "cam cut-point {} outside [0, 1]",
                self.cam_cutpoint
            )));
        }
        self.clean_grad.validate(height, width)
    }
}
