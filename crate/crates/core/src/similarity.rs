//! Similarity metrics between an input and its re-synthesized counterpart.
//!
//! All metrics are oriented through [`Metric::ood_score`] so that larger
//! always means "more out-of-distribution" when thresholding or ranking.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;

/// Floor below which a mean squared error counts as an exact match.
pub const MSE_FLOOR: f64 = 1e-10;
/// PSNR reported for exact matches instead of +inf.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for pixel values in `[0, 1]`, capped at
/// 99 for (near-)identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a.mse(b);
    if mse < MSE_FLOOR {
        Ok(PSNR_CAP)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Root-mean-square pixel distance.
pub fn l2_distance(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "l2")?;
    Ok(a.mse(b).sqrt())
}

/// Mean absolute difference between two logit vectors.
pub fn logits_l1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::arg(alloc::format!(
            "logits_l1 needs equal-length non-empty vectors, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

const FSD_C1: f64 = 1e-6;
const FSD_C2: f64 = 1e-6;

/// Feature-space structural distance.
///
/// Each side is a stack of feature maps, ordered shallow to deep, with the
/// raw image as layer 0. For every channel of every layer a structural
/// similarity term is computed from spatial statistics,
///
/// ```text
/// sim = (2*mu_a*mu_b + c1) / (mu_a^2 + mu_b^2 + c1)
///     * (2*cov + c2) / (var_a + var_b + c2)
/// ```
///
/// and the distance is one minus the uniformly weighted mean of all terms.
/// Identical stacks score 0; the maximum is 2 (anti-correlated features).
pub fn fsd(a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::arg(alloc::format!(
            "fsd needs equal-length non-empty feature stacks, got {} and {} layers",
            a.len(),
            b.len()
        )));
    }
    let mut terms: Vec<f64> = Vec::new();
    for (layer, (fa, fb)) in a.iter().zip(b).enumerate() {
        fa.check_same_shape(fb, "fsd")
            .map_err(|_| Error::arg(alloc::format!("fsd layer {layer} shapes differ")))?;
        for c in 0..fa.channels() {
            terms.push(ssim_term(fa.channel(c), fb.channel(c)));
        }
    }
    let mean: f64 = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(1.0 - mean)
}

fn ssim_term(xa: &[f64], xb: &[f64]) -> f64 {
    let n = xa.len() as f64;
    let mu_a = xa.iter().sum::<f64>() / n;
    let mu_b = xb.iter().sum::<f64>() / n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for (&va, &vb) in xa.iter().zip(xb) {
        var_a += (va - mu_a) * (va - mu_a);
        var_b += (vb - mu_b) * (vb - mu_b);
        cov += (va - mu_a) * (vb - mu_b);
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let luminance = (2.0 * mu_a * mu_b + FSD_C1) / (mu_a * mu_a + mu_b * mu_b + FSD_C1);
    let structure = (2.0 * cov + FSD_C2) / (var_a + var_b + FSD_C2);
    luminance * structure
}

/// The similarity metrics a detector can monitor or score with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Psnr,
    L2,
    LogitsL1,
    Fsd,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Psnr, Metric::L2, Metric::LogitsL1, Metric::Fsd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::L2 => "l2",
            Metric::LogitsL1 => "logits_l1",
            Metric::Fsd => "fsd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::config(alloc::format!("unknown metric '{name}'")))
    }

    /// Orients a raw metric value so larger means more out-of-distribution.
    /// PSNR grows with similarity and is negated; the others are distances
    /// already.
    pub fn ood_score(self, value: f64) -> f64 {
        match self {
            Metric::Psnr => -value,
            Metric::L2 | Metric::LogitsL1 | Metric::Fsd => value,
        }
    }
}
