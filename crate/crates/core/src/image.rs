//! The dense buffer type shared by pixel images, noise, and feature maps.
//!
//! Layout is channel-major, then rows, then columns (`[c][y][x]`), all `f64`.
//! Pixel images normally live in `[0, 1]`; noise and feature maps are
//! unconstrained. Shape checks happen at the API boundaries that combine two
//! buffers, so inner loops can index without validation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A `channels x height x width` buffer of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// All-zero image of the given shape.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Image with every element set to `value`.
    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Wraps an existing buffer; the length must match the shape.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::arg(format_shape_mismatch(
                channels,
                height,
                width,
                data.len(),
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    /// Standard-normal noise of the same shape as `self`.
    pub fn noise_like(&self, rng: &mut RngStream) -> Image {
        let mut out = Image::zeros(self.channels, self.height, self.width);
        for v in &mut out.data {
            *v = rng.next_gaussian();
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One channel as a contiguous `height * width` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.height * self.width;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    /// Returns an error if the two shapes differ; `what` names the operation.
    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::arg(alloc::format!(
                "{what}: shape mismatch, {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Elementwise `self[i] += k * other[i]`. Shapes must already match.
    pub fn add_scaled(&mut self, other: &Image, k: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    /// Elementwise `self[i] *= k`.
    pub fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    /// New image `a*ka + b*kb`. Shapes must already match.
    pub fn lin_comb(a: &Image, ka: f64, b: &Image, kb: f64) -> Image {
        debug_assert_eq!(a.shape(), b.shape());
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| ka * x + kb * y)
            .collect();
        Image {
            channels: a.channels,
            height: a.height,
            width: a.width,
            data,
        }
    }

    /// Mean of all elements.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared difference against `other`. Shapes must already match.
    pub fn mse(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        sum / self.data.len() as f64
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every element to the nearest `f32`-representable value.
    pub fn snap_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Separable Gaussian smoothing per channel, radius 2, edge clamped.
    pub fn smoothed(&self, sigma: f64) -> Image {
        let mut w = [0.0f64; 5];
        for (k, wk) in w.iter_mut().enumerate() {
            let d = k as f64 - 2.0;
            *wk = (-d * d / (2.0 * sigma * sigma)).exp();
        }
        let norm: f64 = w.iter().sum();
        for wk in &mut w {
            *wk /= norm;
        }

        let (ch, h, wd) = self.shape();
        let mut pass = self.clone();
        for c in 0..ch {
            for y in 0..h {
                for x in 0..wd {
                    let mut acc = 0.0;
                    for (k, &wk) in w.iter().enumerate() {
                        let xx = (x as isize + k as isize - 2).clamp(0, wd as isize - 1);
                        acc += wk * self.get(c, y, xx as usize);
                    }
                    pass.set(c, y, x, acc);
                }
            }
        }
        let mut out = pass.clone();
        for c in 0..ch {
            for y in 0..h {
                for x in 0..wd {
                    let mut acc = 0.0;
                    for (k, &wk) in w.iter().enumerate() {
                        let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1);
                        acc += wk * pass.get(c, yy as usize, x);
                    }
                    out.set(c, y, x, acc);
                }
            }
        }
        out
    }
}

fn format_shape_mismatch(c: usize, h: usize, w: usize, got: usize) -> String {
    alloc::format!("buffer of length {got} does not match shape {c}x{h}x{w}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length() {
        assert!(Image::from_vec(1, 2, 2, vec![0.0; 4]).is_ok());
        let err = Image::from_vec(1, 2, 2, vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn indexing_is_channel_major() {
        let mut img = Image::zeros(2, 2, 3);
        img.set(1, 0, 2, 7.0);
        assert_eq!(img.as_slice()[1 * 6 + 0 * 3 + 2], 7.0);
        assert_eq!(img.get(1, 0, 2), 7.0);
        assert_eq!(img.channel(1)[2], 7.0);
    }

    #[test]
    fn lin_comb_and_add_scaled_agree() {
        let a = Image::filled(1, 2, 2, 3.0);
        let b = Image::filled(1, 2, 2, 5.0);
        let c = Image::lin_comb(&a, 2.0, &b, -1.0);
        let mut d = a.clone();
        d.scale(2.0);
        d.add_scaled(&b, -1.0);
        assert_eq!(c, d);
        assert_eq!(c.get(0, 0, 0), 1.0);
    }

    #[test]
    fn mse_of_identical_images_is_zero() {
        let a = Image::filled(3, 4, 4, 0.25);
        assert_eq!(a.mse(&a), 0.0);
        let b = Image::filled(3, 4, 4, 0.75);
        assert!((a.mse(&b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn noise_like_is_deterministic_per_stream() {
        let base = Image::zeros(1, 4, 4);
        let mut r1 = RngStream::new(3).split("n", 0);
        let mut r2 = RngStream::new(3).split("n", 0);
        assert_eq!(base.noise_like(&mut r1), base.noise_like(&mut r2));
    }

    #[test]
    fn snap_to_f32_is_idempotent() {
        let mut img = Image::filled(1, 1, 2, 0.1 + 1e-12);
        img.snap_to_f32();
        let once = img.clone();
        img.snap_to_f32();
        assert_eq!(img, once);
        assert_eq!(img.get(0, 0, 0), 0.1f32 as f64);
    }
}
