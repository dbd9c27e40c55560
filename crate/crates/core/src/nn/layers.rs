//! Layer primitives: 3x3 convolution, dense, SiLU, and average pooling.
//!
//! Backward passes take the same inputs the forward pass saw plus the
//! upstream gradient, and return the gradient with respect to the input
//! (plus parameter gradients where applicable). All of them are checked
//! against central finite differences in the tests below.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

use super::{init_uniform, snap_slice_to_f32};

/// 3x3 convolution, stride 1, zero padding 1 (shape preserving).
///
/// Weight layout is `[out_c][in_c][3][3]`, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients for one [`Conv2d`].
#[derive(Debug, Clone)]
pub struct Conv2dGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, rng: &mut RngStream) -> Self {
        Conv2d {
            in_c,
            out_c,
            weight: init_uniform(out_c * in_c * 9, in_c * 9, rng),
            bias: vec![0.0; out_c],
        }
    }

    /// All-zero parameters; used for output layers that should start as the
    /// identity-on-nothing map.
    pub fn zeroed(in_c: usize, out_c: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            weight: vec![0.0; out_c * in_c * 9],
            bias: vec![0.0; out_c],
        }
    }

    pub fn zero_grad(&self) -> Conv2dGrad {
        Conv2dGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn check_input(&self, x: &Image) -> Result<()> {
        if x.channels() != self.in_c {
            return Err(Error::arg(alloc::format!(
                "conv expects {} input channels, got {}",
                self.in_c,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Image) -> Result<Image> {
        self.check_input(x)?;
        let (h, w) = (x.height(), x.width());
        let mut out = Image::zeros(self.out_c, h, w);
        for o in 0..self.out_c {
            let out_ch = out.channel_mut(o);
            for c in 0..self.in_c {
                let x_ch = x.channel(c);
                let wbase = (o * self.in_c + c) * 9;
                let k = &self.weight[wbase..wbase + 9];
                for y in 0..h {
                    for ky in 0..3usize {
                        let iy = y + ky;
                        if iy < 1 || iy > h {
                            continue;
                        }
                        let row = &x_ch[(iy - 1) * w..iy * w];
                        let krow = &k[ky * 3..ky * 3 + 3];
                        let orow = &mut out_ch[y * w..(y + 1) * w];
                        for xcol in 0..w {
                            let mut acc = 0.0;
                            if xcol >= 1 {
                                acc += krow[0] * row[xcol - 1];
                            }
                            acc += krow[1] * row[xcol];
                            if xcol + 1 < w {
                                acc += krow[2] * row[xcol + 1];
                            }
                            orow[xcol] += acc;
                        }
                    }
                }
            }
            let b = self.bias[o];
            for v in out.channel_mut(o) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Returns the input gradient and accumulates parameter gradients into
    /// `grads`.
    pub fn backward(&self, x: &Image, dy: &Image, grads: &mut Conv2dGrad) -> Result<Image> {
        self.check_input(x)?;
        if dy.channels() != self.out_c || dy.height() != x.height() || dy.width() != x.width() {
            return Err(Error::arg("conv backward: upstream gradient shape mismatch"));
        }
        let (h, w) = (x.height(), x.width());
        let mut dx = Image::zeros(self.in_c, h, w);
        for o in 0..self.out_c {
            let g_ch = dy.channel(o);
            grads.bias[o] += g_ch.iter().sum::<f64>();
            for c in 0..self.in_c {
                let x_ch = x.channel(c);
                let wbase = (o * self.in_c + c) * 9;
                let k = &self.weight[wbase..wbase + 9];
                let gw = &mut grads.weight[wbase..wbase + 9];
                let dx_ch = dx.channel_mut(c);
                for y in 0..h {
                    let grow = &g_ch[y * w..(y + 1) * w];
                    for ky in 0..3usize {
                        let iy = y + ky;
                        if iy < 1 || iy > h {
                            continue;
                        }
                        let xrow = &x_ch[(iy - 1) * w..iy * w];
                        let dxrow_base = (iy - 1) * w;
                        for kx in 0..3usize {
                            let kidx = ky * 3 + kx;
                            let kval = k[kidx];
                            let mut wacc = 0.0;
                            for xcol in 0..w {
                                let ix = xcol + kx;
                                if ix < 1 || ix > w {
                                    continue;
                                }
                                let g = grow[xcol];
                                wacc += g * xrow[ix - 1];
                                dx_ch[dxrow_base + ix - 1] += g * kval;
                            }
                            gw[kidx] += wacc;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn param_tensors_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn snap_to_f32(&mut self) {
        snap_slice_to_f32(&mut self.weight);
        snap_slice_to_f32(&mut self.bias);
    }
}

/// Fully connected layer, weight layout `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients for one [`Dense`].
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: init_uniform(out_dim * in_dim, in_dim, rng),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::arg(alloc::format!(
                "dense expects input of {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut out = self.bias.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *out_v += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(out)
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut DenseGrad) -> Result<Vec<f64>> {
        if x.len() != self.in_dim || dy.len() != self.out_dim {
            return Err(Error::arg("dense backward: shape mismatch"));
        }
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            grads.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        Ok(dx)
    }

    pub fn param_tensors_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn snap_to_f32(&mut self) {
        snap_slice_to_f32(&mut self.weight);
        snap_slice_to_f32(&mut self.bias);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU activation `x * sigmoid(x)`, elementwise.
pub fn silu_forward(x: &Image) -> Image {
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v *= sigmoid(*v);
    }
    out
}

/// Gradient of SiLU given the forward input.
pub fn silu_backward(x: &Image, dy: &Image) -> Result<Image> {
    x.check_same_shape(dy, "silu backward")?;
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        let s = sigmoid(v);
        *d *= s * (1.0 + v * (1.0 - s));
    }
    Ok(dx)
}

/// 2x2 average pooling, stride 2. Height and width must be even.
pub fn avg_pool2_forward(x: &Image) -> Result<Image> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::arg(alloc::format!(
            "avg_pool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let mut out = Image::zeros(c, h / 2, w / 2);
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h / 2 {
            for xcol in 0..w / 2 {
                let base = 2 * y * w + 2 * xcol;
                dst[y * (w / 2) + xcol] =
                    0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
            }
        }
    }
    Ok(out)
}

/// Backward of 2x2 average pooling for an input of shape `(c, h, w)`.
pub fn avg_pool2_backward(input_shape: (usize, usize, usize), dy: &Image) -> Result<Image> {
    let (c, h, w) = input_shape;
    if dy.shape() != (c, h / 2, w / 2) {
        return Err(Error::arg("avg_pool2 backward: shape mismatch"));
    }
    let mut dx = Image::zeros(c, h, w);
    for ch in 0..c {
        let g = dy.channel(ch);
        let dst = dx.channel_mut(ch);
        for y in 0..h / 2 {
            for xcol in 0..w / 2 {
                let v = 0.25 * g[y * (w / 2) + xcol];
                let base = 2 * y * w + 2 * xcol;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + w] = v;
                dst[base + w + 1] = v;
            }
        }
    }
    Ok(dx)
}

/// Spatial mean per channel.
pub fn global_avg_pool(x: &Image) -> Vec<f64> {
    let n = (x.height() * x.width()) as f64;
    (0..x.channels())
        .map(|c| x.channel(c).iter().sum::<f64>() / n)
        .collect()
}

/// Backward of [`global_avg_pool`] for an input of shape `(c, h, w)`.
pub fn global_avg_pool_backward(
    input_shape: (usize, usize, usize),
    dy: &[f64],
) -> Result<Image> {
    let (c, h, w) = input_shape;
    if dy.len() != c {
        return Err(Error::arg("global_avg_pool backward: channel mismatch"));
    }
    let mut dx = Image::zeros(c, h, w);
    let scale = 1.0 / (h * w) as f64;
    for ch in 0..c {
        let v = dy[ch] * scale;
        for d in dx.channel_mut(ch) {
            *d = v;
        }
    }
    Ok(dx)
}

/// Bilinear upsampling to `(out_h, out_w)` with half-pixel alignment
/// (`align_corners = false` semantics).
pub fn upsample_bilinear(x: &Image, out_h: usize, out_w: usize) -> Image {
    let (c, h, w) = x.shape();
    let mut out = Image::zeros(c, out_h, out_w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = out.channel_mut(ch);
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(c: usize, h: usize, w: usize, rng: &mut RngStream) -> Image {
        let mut img = Image::zeros(c, h, w);
        for v in img.as_mut_slice() {
            *v = rng.next_gaussian();
        }
        img
    }

    fn dot(a: &Image, b: &Image) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
    }

    /// Central finite difference of `f` along coordinate `i` of `x`.
    fn fd_scalar(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            (analytic - numeric).abs() / denom < 1e-3,
            "{what}: analytic {analytic} vs numeric {numeric}"
        );
    }

    #[test]
    fn conv_forward_matches_manual_stencil() {
        let mut rng = RngStream::new(1).split("conv", 0);
        let conv = Conv2d::new(2, 3, &mut rng);
        let x = random_image(2, 5, 4, &mut rng);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), (3, 5, 4));
        // Re-derive one output value straight from the definition.
        let (o, py, px) = (1usize, 2usize, 1usize);
        let mut want = conv.bias[o];
        for c in 0..2 {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let iy = py + ky;
                    let ix = px + kx;
                    if iy < 1 || iy > 5 || ix < 1 || ix > 4 {
                        continue;
                    }
                    want += conv.weight[(o * 2 + c) * 9 + ky * 3 + kx]
                        * x.get(c, iy - 1, ix - 1);
                }
            }
        }
        assert!((y.get(o, py, px) - want).abs() < 1e-12);
        // And a corner, to exercise the zero padding.
        let mut corner = conv.bias[0];
        for c in 0..2 {
            for ky in 1..3usize {
                for kx in 1..3usize {
                    corner += conv.weight[c * 9 + ky * 3 + kx] * x.get(c, ky - 1, kx - 1);
                }
            }
        }
        assert!((y.get(0, 0, 0) - corner).abs() < 1e-12);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = RngStream::new(2).split("convgrad", 0);
        let conv = Conv2d::new(2, 2, &mut rng);
        let x = random_image(2, 4, 4, &mut rng);
        let v = random_image(2, 4, 4, &mut rng);

        let mut grads = conv.zero_grad();
        let dx = conv.backward(&x, &v, &mut grads).unwrap();

        let mut loss_of_input = |flat: &[f64]| {
            let xi = Image::from_vec(2, 4, 4, flat.to_vec()).unwrap();
            dot(&conv.forward(&xi).unwrap(), &v)
        };
        for i in [0usize, 5, 17, 31] {
            let num = fd_scalar(&mut loss_of_input, x.as_slice(), i);
            assert_close(dx.as_slice()[i], num, "conv dx");
        }

        let mut loss_of_weight = |flat: &[f64]| {
            let mut c2 = conv.clone();
            c2.weight = flat.to_vec();
            dot(&c2.forward(&x).unwrap(), &v)
        };
        for i in [0usize, 9, 20, 35] {
            let num = fd_scalar(&mut loss_of_weight, &conv.weight, i);
            assert_close(grads.weight[i], num, "conv dw");
        }

        let mut loss_of_bias = |flat: &[f64]| {
            let mut c2 = conv.clone();
            c2.bias = flat.to_vec();
            dot(&c2.forward(&x).unwrap(), &v)
        };
        for i in 0..2 {
            let num = fd_scalar(&mut loss_of_bias, &conv.bias, i);
            assert_close(grads.bias[i], num, "conv db");
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = RngStream::new(3).split("dense", 0);
        let dense = Dense::new(5, 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.next_gaussian()).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.next_gaussian()).collect();

        let mut grads = dense.zero_grad();
        let dx = dense.backward(&x, &v, &mut grads).unwrap();

        let mut loss_of_input = |flat: &[f64]| {
            dense
                .forward(flat)
                .unwrap()
                .iter()
                .zip(&v)
                .map(|(y, vv)| y * vv)
                .sum::<f64>()
        };
        for i in 0..5 {
            assert_close(dx[i], fd_scalar(&mut loss_of_input, &x, i), "dense dx");
        }
        let mut loss_of_weight = |flat: &[f64]| {
            let mut d2 = dense.clone();
            d2.weight = flat.to_vec();
            d2.forward(&x)
                .unwrap()
                .iter()
                .zip(&v)
                .map(|(y, vv)| y * vv)
                .sum::<f64>()
        };
        for i in [0usize, 7, 14] {
            assert_close(
                grads.weight[i],
                fd_scalar(&mut loss_of_weight, &dense.weight, i),
                "dense dw",
            );
        }
    }

    #[test]
    fn silu_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(4).split("silu", 0);
        let x = random_image(1, 3, 3, &mut rng);
        let v = random_image(1, 3, 3, &mut rng);
        let dx = silu_backward(&x, &v).unwrap();
        let mut loss = |flat: &[f64]| {
            let xi = Image::from_vec(1, 3, 3, flat.to_vec()).unwrap();
            dot(&silu_forward(&xi), &v)
        };
        for i in 0..9 {
            assert_close(dx.as_slice()[i], fd_scalar(&mut loss, x.as_slice(), i), "silu dx");
        }
    }

    #[test]
    fn pooling_roundtrip_and_gradients() {
        let mut rng = RngStream::new(5).split("pool", 0);
        let x = random_image(2, 4, 4, &mut rng);
        let y = avg_pool2_forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 2, 2));
        let want = 0.25 * (x.get(0, 0, 0) + x.get(0, 0, 1) + x.get(0, 1, 0) + x.get(0, 1, 1));
        assert!((y.get(0, 0, 0) - want).abs() < 1e-12);

        let v = random_image(2, 2, 2, &mut rng);
        let dx = avg_pool2_backward((2, 4, 4), &v).unwrap();
        let mut loss = |flat: &[f64]| {
            let xi = Image::from_vec(2, 4, 4, flat.to_vec()).unwrap();
            dot(&avg_pool2_forward(&xi).unwrap(), &v)
        };
        for i in [0usize, 9, 22, 31] {
            assert_close(dx.as_slice()[i], fd_scalar(&mut loss, x.as_slice(), i), "pool dx");
        }
        assert!(avg_pool2_forward(&random_image(1, 3, 4, &mut rng)).is_err());

        let g = global_avg_pool(&x);
        assert_eq!(g.len(), 2);
        assert!((g[0] - x.channel(0).iter().sum::<f64>() / 16.0).abs() < 1e-12);
        let dg = global_avg_pool_backward((2, 4, 4), &[1.0, 2.0]).unwrap();
        assert!((dg.get(0, 1, 1) - 1.0 / 16.0).abs() < 1e-15);
        assert!((dg.get(1, 3, 2) - 2.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn upsample_preserves_constants_and_interpolates() {
        let c = Image::filled(1, 4, 4, 0.7);
        let up = upsample_bilinear(&c, 16, 16);
        assert!(up.as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-12));

        // A 2x2 checker upsampled to 4x4: centers of the corner cells keep
        // the original values, interior positions blend.
        let mut chk = Image::zeros(1, 2, 2);
        chk.set(0, 0, 0, 1.0);
        chk.set(0, 1, 1, 1.0);
        let up = upsample_bilinear(&chk, 4, 4);
        assert!((up.get(0, 0, 0) - 1.0).abs() < 1e-12);
        assert!((up.get(0, 3, 3) - 1.0).abs() < 1e-12);
        assert!((up.get(0, 0, 3) - 0.0).abs() < 1e-12);
        let mid = up.get(0, 1, 1);
        assert!((mid - 0.5).abs() < 0.26, "mid {mid}");
    }
}
