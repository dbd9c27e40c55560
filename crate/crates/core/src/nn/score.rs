//! Conditional noise-prediction network and its trainer.
//!
//! The network maps a noisy image plus a timestep and an optional class label
//! to a predicted noise field of the same shape. Architecture: a 3x3 input
//! convolution to 16 channels, three residual blocks whose hidden activations
//! receive a per-channel bias projected from the conditioning vector, a SiLU,
//! and a zero-initialized 3x3 output convolution (so the untrained network
//! predicts zero noise).
//!
//! Conditioning is a 32-dimensional sinusoidal timestep embedding plus a
//! learned class embedding with one extra row for the unconditional (null)
//! label, which classifier-free guidance relies on at sampling time.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::diffusion::{forward_diffuse, NoisePredictor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::ClassId;

use super::layers::{silu_backward, silu_forward, Conv2d, Conv2dGrad, Dense, DenseGrad};
use super::{snap_slice_to_f32, Adam};

pub const SCORE_WIDTH: usize = 16;
pub const SCORE_BLOCKS: usize = 3;
pub const SCORE_EMB_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
struct ResBlock {
    cond_proj: Dense,
    conv1: Conv2d,
    conv2: Conv2d,
}

/// The conditional noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    pub in_channels: usize,
    pub n_classes: usize,
    conv_in: Conv2d,
    blocks: Vec<ResBlock>,
    pub(crate) conv_out: Conv2d,
    /// `(n_classes + 1) x SCORE_EMB_DIM`, last row is the null label.
    class_emb: Vec<f64>,
}

/// Forward activations needed by [`ScoreNetwork::backward`].
pub struct ScoreCache {
    x: Image,
    cond: Vec<f64>,
    emb_row: usize,
    /// `h[0]` is the input convolution output; `h[i + 1]` follows block `i`.
    h: Vec<Image>,
    s1: Vec<Image>,
    a_biased: Vec<Image>,
    s2: Vec<Image>,
    s_out: Image,
}

/// Parameter gradients for the whole network, in declaration order.
pub struct ScoreGrads {
    conv_in: Conv2dGrad,
    blocks: Vec<(DenseGrad, Conv2dGrad, Conv2dGrad)>,
    conv_out: Conv2dGrad,
    class_emb: Vec<f64>,
}

/// Sinusoidal timestep embedding with frequencies `10000^(-i / half)`.
fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (10000.0f64).powf(-(i as f64) / half as f64);
        let angle = t as f64 * freq;
        out[i] = angle.sin();
        out[half + i] = angle.cos();
    }
    out
}

impl ScoreNetwork {
    pub fn new(in_channels: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        if in_channels == 0 || n_classes == 0 {
            return Err(Error::config("score network needs >= 1 channel and class"));
        }
        let mut init = rng.split("score_init", 0);
        let conv_in = Conv2d::new(in_channels, SCORE_WIDTH, &mut init);
        let blocks = (0..SCORE_BLOCKS)
            .map(|_| ResBlock {
                cond_proj: Dense::new(SCORE_EMB_DIM, SCORE_WIDTH, &mut init),
                conv1: Conv2d::new(SCORE_WIDTH, SCORE_WIDTH, &mut init),
                conv2: Conv2d::new(SCORE_WIDTH, SCORE_WIDTH, &mut init),
            })
            .collect();
        let conv_out = Conv2d::zeroed(SCORE_WIDTH, in_channels);
        let class_emb = super::init_uniform(
            (n_classes + 1) * SCORE_EMB_DIM,
            SCORE_EMB_DIM,
            &mut init,
        );
        Ok(ScoreNetwork {
            in_channels,
            n_classes,
            conv_in,
            blocks,
            conv_out,
            class_emb,
        })
    }

    /// Embedding-table row for a label, with `None` mapping to the null row.
    fn emb_row(&self, y: Option<ClassId>) -> Result<usize> {
        match y {
            Some(label) if label >= self.n_classes => Err(Error::arg(alloc::format!(
                "class label {label} out of range (n_classes {})",
                self.n_classes
            ))),
            Some(label) => Ok(label),
            None => Ok(self.n_classes),
        }
    }

    fn cond_vector(&self, t: usize, row: usize) -> Vec<f64> {
        let mut cond = timestep_embedding(t, SCORE_EMB_DIM);
        let emb = &self.class_emb[row * SCORE_EMB_DIM..(row + 1) * SCORE_EMB_DIM];
        for (c, e) in cond.iter_mut().zip(emb) {
            *c += e;
        }
        cond
    }

    pub fn forward_cached(
        &self,
        x: &Image,
        t: usize,
        y: Option<ClassId>,
    ) -> Result<(Image, ScoreCache)> {
        if x.channels() != self.in_channels {
            return Err(Error::arg(alloc::format!(
                "score network expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let emb_row = self.emb_row(y)?;
        let cond = self.cond_vector(t, emb_row);

        let mut h = Vec::with_capacity(SCORE_BLOCKS + 1);
        let mut s1_all = Vec::with_capacity(SCORE_BLOCKS);
        let mut a_all = Vec::with_capacity(SCORE_BLOCKS);
        let mut s2_all = Vec::with_capacity(SCORE_BLOCKS);

        h.push(self.conv_in.forward(x)?);
        for block in &self.blocks {
            let h_in = h.last().unwrap();
            let s1 = silu_forward(h_in);
            let mut a = block.conv1.forward(&s1)?;
            let bias_vec = block.cond_proj.forward(&cond)?;
            for (c, &b) in bias_vec.iter().enumerate() {
                for v in a.channel_mut(c) {
                    *v += b;
                }
            }
            let s2 = silu_forward(&a);
            let r = block.conv2.forward(&s2)?;
            let mut h_next = h_in.clone();
            h_next.add_scaled(&r, 1.0);
            s1_all.push(s1);
            a_all.push(a);
            s2_all.push(s2);
            h.push(h_next);
        }
        let s_out = silu_forward(h.last().unwrap());
        let out = self.conv_out.forward(&s_out)?;
        Ok((
            out,
            ScoreCache {
                x: x.clone(),
                cond,
                emb_row,
                h,
                s1: s1_all,
                a_biased: a_all,
                s2: s2_all,
                s_out,
            },
        ))
    }

    pub fn zero_grads(&self) -> ScoreGrads {
        ScoreGrads {
            conv_in: self.conv_in.zero_grad(),
            blocks: self
                .blocks
                .iter()
                .map(|b| (b.cond_proj.zero_grad(), b.conv1.zero_grad(), b.conv2.zero_grad()))
                .collect(),
            conv_out: self.conv_out.zero_grad(),
            class_emb: vec![0.0; self.class_emb.len()],
        }
    }

    /// Backpropagates `dout` through the cached forward pass, accumulating
    /// parameter gradients and returning the gradient w.r.t. the input image.
    pub fn backward(
        &self,
        cache: &ScoreCache,
        dout: &Image,
        grads: &mut ScoreGrads,
    ) -> Result<Image> {
        let ds_out = self.conv_out.backward(&cache.s_out, dout, &mut grads.conv_out)?;
        let mut dh = silu_backward(cache.h.last().unwrap(), &ds_out)?;
        let mut dcond = vec![0.0; SCORE_EMB_DIM];

        for (i, block) in self.blocks.iter().enumerate().rev() {
            let (dense_g, conv1_g, conv2_g) = &mut grads.blocks[i];
            let ds2 = block.conv2.backward(&cache.s2[i], &dh, conv2_g)?;
            let da = silu_backward(&cache.a_biased[i], &ds2)?;
            let bias_grad: Vec<f64> = (0..SCORE_WIDTH)
                .map(|c| da.channel(c).iter().sum::<f64>())
                .collect();
            let dc = block.cond_proj.backward(&cache.cond, &bias_grad, dense_g)?;
            for (acc, v) in dcond.iter_mut().zip(&dc) {
                *acc += v;
            }
            let ds1 = block.conv1.backward(&cache.s1[i], &da, conv1_g)?;
            let dh_through = silu_backward(&cache.h[i], &ds1)?;
            dh.add_scaled(&dh_through, 1.0);
        }

        let dx = self.conv_in.backward(&cache.x, &dh, &mut grads.conv_in)?;
        let row = &mut grads.class_emb
            [cache.emb_row * SCORE_EMB_DIM..(cache.emb_row + 1) * SCORE_EMB_DIM];
        for (acc, v) in row.iter_mut().zip(&dcond) {
            *acc += v;
        }
        Ok(dx)
    }

    /// Vector-Jacobian product of the network output against the input image:
    /// given `v`, returns `(d out / d x)^T v`. Used by guidance variants that
    /// differentiate through the noise prediction.
    pub fn vjp_input(
        &self,
        x: &Image,
        t: usize,
        y: Option<ClassId>,
        v: &Image,
    ) -> Result<Image> {
        let (out, cache) = self.forward_cached(x, t, y)?;
        out.check_same_shape(v, "vjp_input")?;
        let mut grads = self.zero_grads();
        self.backward(&cache, v, &mut grads)
    }

    fn adam_apply(&mut self, opt: &mut Adam, grads: &ScoreGrads) -> Result<()> {
        let mut slot = 0;
        let mut next = |opt: &mut Adam, params: &mut [f64], g: &[f64]| -> Result<()> {
            let r = opt.update(slot, params, g);
            slot += 1;
            r
        };
        next(opt, &mut self.conv_in.weight, &grads.conv_in.weight)?;
        next(opt, &mut self.conv_in.bias, &grads.conv_in.bias)?;
        for (block, (dense_g, conv1_g, conv2_g)) in self.blocks.iter_mut().zip(&grads.blocks) {
            next(opt, &mut block.cond_proj.weight, &dense_g.weight)?;
            next(opt, &mut block.cond_proj.bias, &dense_g.bias)?;
            next(opt, &mut block.conv1.weight, &conv1_g.weight)?;
            next(opt, &mut block.conv1.bias, &conv1_g.bias)?;
            next(opt, &mut block.conv2.weight, &conv2_g.weight)?;
            next(opt, &mut block.conv2.bias, &conv2_g.bias)?;
        }
        next(opt, &mut self.conv_out.weight, &grads.conv_out.weight)?;
        next(opt, &mut self.conv_out.bias, &grads.conv_out.bias)?;
        next(opt, &mut self.class_emb, &grads.class_emb)?;
        Ok(())
    }

    /// All parameters, flattened in a fixed order for checkpointing.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.conv_in.weight);
        out.extend_from_slice(&self.conv_in.bias);
        for b in &self.blocks {
            out.extend_from_slice(&b.cond_proj.weight);
            out.extend_from_slice(&b.cond_proj.bias);
            out.extend_from_slice(&b.conv1.weight);
            out.extend_from_slice(&b.conv1.bias);
            out.extend_from_slice(&b.conv2.weight);
            out.extend_from_slice(&b.conv2.bias);
        }
        out.extend_from_slice(&self.conv_out.weight);
        out.extend_from_slice(&self.conv_out.bias);
        out.extend_from_slice(&self.class_emb);
        out
    }

    /// Loads parameters produced by [`flat_params`] on an identically shaped
    /// network.
    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flat_params().len();
        if flat.len() != expected {
            return Err(Error::arg(alloc::format!(
                "parameter blob has {} values, network needs {expected}",
                flat.len()
            )));
        }
        let mut pos = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        };
        take(&mut self.conv_in.weight);
        take(&mut self.conv_in.bias);
        for b in &mut self.blocks {
            take(&mut b.cond_proj.weight);
            take(&mut b.cond_proj.bias);
            take(&mut b.conv1.weight);
            take(&mut b.conv1.bias);
            take(&mut b.conv2.weight);
            take(&mut b.conv2.bias);
        }
        take(&mut self.conv_out.weight);
        take(&mut self.conv_out.bias);
        take(&mut self.class_emb);
        Ok(())
    }

    pub fn snap_to_f32(&mut self) {
        self.conv_in.snap_to_f32();
        for b in &mut self.blocks {
            b.cond_proj.snap_to_f32();
            b.conv1.snap_to_f32();
            b.conv2.snap_to_f32();
        }
        self.conv_out.snap_to_f32();
        snap_slice_to_f32(&mut self.class_emb);
    }
}

impl NoisePredictor for ScoreNetwork {
    fn predict_noise(&self, x: &Image, t: usize, y: Option<ClassId>) -> Result<Image> {
        Ok(self.forward_cached(x, t, y)?.0)
    }
}

/// Training options for [`train_score`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of dropping the class label per sample, which trains the
    /// null row the guidance's unconditional branch uses.
    pub p_uncond: f64,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        ScoreTrainConfig {
            epochs: 12,
            batch_size: 16,
            lr: 2e-3,
            p_uncond: 0.1,
        }
    }
}

impl ScoreTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("score training needs epochs >= 1, batch >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("score training lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::config("p_uncond must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrainStats {
    /// Mean denoising loss per batch, in step order.
    pub loss_curve: Vec<f64>,
    /// How many samples were trained with the null label.
    pub null_cond_draws: usize,
}

fn shuffle(indices: &mut [usize], rng: &mut RngStream) {
    for i in (1..indices.len()).rev() {
        let j = rng.next_below((i + 1) as u64) as usize;
        indices.swap(i, j);
    }
}

/// Trains the network with the standard denoising objective: per sample a
/// uniform timestep in `1..=t_max` and fresh Gaussian noise, squared error
/// between predicted and true noise. Parameters are rounded to `f32` values
/// at the end so checkpoints round-trip exactly.
pub fn train_score(
    net: &mut ScoreNetwork,
    data: &[(&Image, ClassId)],
    schedule: &NoiseSchedule,
    cfg: &ScoreTrainConfig,
    root: &RngStream,
) -> Result<ScoreTrainStats> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("score training set is empty"));
    }
    for (img, label) in data {
        if img.channels() != net.in_channels {
            return Err(Error::config("score training image channel mismatch"));
        }
        if *label >= net.n_classes {
            return Err(Error::config(alloc::format!(
                "score training label {label} out of range ({})",
                net.n_classes
            )));
        }
    }

    let mut opt = Adam::new(cfg.lr);
    let mut loss_curve = Vec::new();
    let mut null_draws = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let epoch_stream = root.split("epoch", epoch as u64);
        let mut shuffle_rng = epoch_stream.split("shuffle", 0);
        shuffle(&mut order, &mut shuffle_rng);

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = net.zero_grads();
            let mut batch_loss = 0.0;
            for (pos, &sample_idx) in batch.iter().enumerate() {
                let mut srng =
                    epoch_stream.split("sample", (batch_idx * cfg.batch_size + pos) as u64);
                let (x0, label) = data[sample_idx];
                let t = srng.next_below(schedule.t_max() as u64) as usize + 1;
                let noise = x0.noise_like(&mut srng);
                let y = if srng.next_uniform() < cfg.p_uncond {
                    null_draws += 1;
                    None
                } else {
                    Some(label)
                };
                let x_t = forward_diffuse(x0, t, schedule, &noise)?;
                let (eps_hat, cache) = net.forward_cached(&x_t, t, y)?;
                let diff = Image::lin_comb(&eps_hat, 1.0, &noise, -1.0);
                batch_loss +=
                    diff.as_slice().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64;
                let mut dout = diff;
                dout.scale(2.0 / (batch.len() * x0.len()) as f64);
                net.backward(&cache, &dout, &mut grads)?;
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: alloc::format!("non-finite loss in batch {batch_idx}"),
                });
            }
            loss_curve.push(batch_loss);
            opt.begin_step();
            net.adam_apply(&mut opt, &grads)?;
        }
    }
    net.snap_to_f32();
    Ok(ScoreTrainStats {
        loss_curve,
        null_cond_draws: null_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind};

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed).split("score_test", 0)
    }

    fn random_image(c: usize, h: usize, w: usize, rng: &mut RngStream) -> Image {
        let mut img = Image::zeros(c, h, w);
        for v in img.as_mut_slice() {
            *v = rng.next_gaussian();
        }
        img
    }

    #[test]
    fn timestep_embedding_matches_formula() {
        let emb = timestep_embedding(7, 8);
        for i in 0..4 {
            let freq = (10000.0f64).powf(-(i as f64) / 4.0);
            assert!((emb[i] - (7.0 * freq).sin()).abs() < 1e-15);
            assert!((emb[4 + i] - (7.0 * freq).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn untrained_network_predicts_zero_noise() {
        let mut r = rng(1);
        let net = ScoreNetwork::new(1, 4, &mut r).unwrap();
        let x = random_image(1, 8, 8, &mut r);
        let out = net.predict_noise(&x, 10, Some(2)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditioning_changes_the_output() {
        let mut r = rng(2);
        let mut net = ScoreNetwork::new(1, 3, &mut r).unwrap();
        net.conv_out = Conv2d::new(SCORE_WIDTH, 1, &mut r);
        let x = random_image(1, 8, 8, &mut r);
        let y0 = net.predict_noise(&x, 5, Some(0)).unwrap();
        let y1 = net.predict_noise(&x, 5, Some(1)).unwrap();
        let ynull = net.predict_noise(&x, 5, None).unwrap();
        let t_other = net.predict_noise(&x, 90, Some(0)).unwrap();
        assert!(y0.mse(&y1) > 0.0);
        assert!(y0.mse(&ynull) > 0.0);
        assert!(y0.mse(&t_other) > 0.0);
        assert!(net.predict_noise(&x, 5, Some(3)).is_err());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut r = rng(3);
        let mut net = ScoreNetwork::new(1, 2, &mut r).unwrap();
        net.conv_out = Conv2d::new(SCORE_WIDTH, 1, &mut r);
        let x = random_image(1, 6, 6, &mut r);
        let v = random_image(1, 6, 6, &mut r);

        let (_, cache) = net.forward_cached(&x, 3, Some(1)).unwrap();
        let mut grads = net.zero_grads();
        let dx = net.backward(&cache, &v, &mut grads).unwrap();

        let flat = net.flat_params();
        let mut analytic_flat = Vec::new();
        analytic_flat.extend_from_slice(&grads.conv_in.weight);
        analytic_flat.extend_from_slice(&grads.conv_in.bias);
        for (d, c1, c2) in &grads.blocks {
            analytic_flat.extend_from_slice(&d.weight);
            analytic_flat.extend_from_slice(&d.bias);
            analytic_flat.extend_from_slice(&c1.weight);
            analytic_flat.extend_from_slice(&c1.bias);
            analytic_flat.extend_from_slice(&c2.weight);
            analytic_flat.extend_from_slice(&c2.bias);
        }
        analytic_flat.extend_from_slice(&grads.conv_out.weight);
        analytic_flat.extend_from_slice(&grads.conv_out.bias);
        analytic_flat.extend_from_slice(&grads.class_emb);
        assert_eq!(analytic_flat.len(), flat.len());

        let loss_at = |params: &[f64]| {
            let mut n2 = net.clone();
            n2.load_flat_params(params).unwrap();
            let y = n2.predict_noise(&x, 3, Some(1)).unwrap();
            y.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        // Spot-check a spread of parameters: input conv, a block conv, the
        // conditioning projection, the output conv, and the used embedding
        // row (row 1 starts at SCORE_EMB_DIM from the table end's base).
        let emb_base = flat.len() - 3 * SCORE_EMB_DIM;
        let picks = [
            0usize,
            100,
            200,
            1000,
            3000,
            6000,
            flat.len() - 3 * SCORE_EMB_DIM - 5,
            emb_base + SCORE_EMB_DIM + 2,
        ];
        for &i in &picks {
            let h = 1e-5;
            let mut p = flat.clone();
            p[i] += h;
            let up = loss_at(&p);
            p[i] -= 2.0 * h;
            let down = loss_at(&p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = analytic_flat[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < 1e-3,
                "param {i}: analytic {analytic} vs numeric {numeric}"
            );
        }

        // Input gradient via the same directional probe.
        let loss_of_input = |flat_x: &[f64]| {
            let xi = Image::from_vec(1, 6, 6, flat_x.to_vec()).unwrap();
            let y = net.predict_noise(&xi, 3, Some(1)).unwrap();
            y.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in [0usize, 13, 35] {
            let h = 1e-5;
            let mut p = x.as_slice().to_vec();
            p[i] += h;
            let up = loss_of_input(&p);
            p[i] -= 2.0 * h;
            let down = loss_of_input(&p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = dx.as_slice()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < 1e-3,
                "input {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn vjp_input_agrees_with_backward() {
        let mut r = rng(4);
        let mut net = ScoreNetwork::new(1, 2, &mut r).unwrap();
        net.conv_out = Conv2d::new(SCORE_WIDTH, 1, &mut r);
        let x = random_image(1, 6, 6, &mut r);
        let v = random_image(1, 6, 6, &mut r);
        let via_vjp = net.vjp_input(&x, 2, None, &v).unwrap();
        let (_, cache) = net.forward_cached(&x, 2, None).unwrap();
        let mut grads = net.zero_grads();
        let via_backward = net.backward(&cache, &v, &mut grads).unwrap();
        assert_eq!(via_vjp, via_backward);
    }

    #[test]
    fn training_reduces_loss_and_snaps_params() {
        let mut r = rng(5);
        let schedule = make_schedule(50, ScheduleKind::Linear).unwrap();
        let mut net = ScoreNetwork::new(1, 2, &mut r).unwrap();
        let images: Vec<Image> = (0..8).map(|_| random_image(1, 8, 8, &mut r)).collect();
        let data: Vec<(&Image, ClassId)> =
            images.iter().enumerate().map(|(i, im)| (im, i % 2)).collect();
        let cfg = ScoreTrainConfig {
            epochs: 14,
            batch_size: 4,
            lr: 3e-3,
            p_uncond: 0.2,
        };
        let stats = train_score(&mut net, &data, &schedule, &cfg, &RngStream::new(9)).unwrap();
        assert_eq!(stats.loss_curve.len(), 14 * 2);
        let head: f64 = stats.loss_curve[..4].iter().sum::<f64>() / 4.0;
        let tail: f64 =
            stats.loss_curve[stats.loss_curve.len() - 4..].iter().sum::<f64>() / 4.0;
        assert!(tail < head, "loss went {head} -> {tail}");
        assert!(stats.null_cond_draws > 0);
        assert!(net.flat_params().iter().all(|&p| p == p as f32 as f64));
    }

    #[test]
    fn training_is_deterministic() {
        let mut r1 = rng(6);
        let schedule = make_schedule(20, ScheduleKind::Linear).unwrap();
        let images: Vec<Image> = (0..4).map(|_| random_image(1, 8, 8, &mut r1)).collect();
        let data: Vec<(&Image, ClassId)> =
            images.iter().map(|im| (im, 0usize)).collect();
        let cfg = ScoreTrainConfig {
            epochs: 2,
            batch_size: 2,
            lr: 1e-3,
            p_uncond: 0.1,
        };
        let mut net_a = ScoreNetwork::new(1, 1, &mut rng(7)).unwrap();
        let mut net_b = ScoreNetwork::new(1, 1, &mut rng(7)).unwrap();
        let sa = train_score(&mut net_a, &data, &schedule, &cfg, &RngStream::new(3)).unwrap();
        let sb = train_score(&mut net_b, &data, &schedule, &cfg, &RngStream::new(3)).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(net_a.flat_params(), net_b.flat_params());
    }

    #[test]
    fn non_finite_loss_is_a_training_error() {
        let mut r = rng(8);
        let schedule = make_schedule(20, ScheduleKind::Linear).unwrap();
        let mut net = ScoreNetwork::new(1, 1, &mut r).unwrap();
        let mut bad = random_image(1, 8, 8, &mut r);
        bad.set(0, 0, 0, f64::NAN);
        let data = [(&bad, 0usize)];
        let cfg = ScoreTrainConfig::default();
        match train_score(&mut net, &data, &schedule, &cfg, &RngStream::new(1)) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let mut r = rng(9);
        let mut net = ScoreNetwork::new(1, 2, &mut r).unwrap();
        net.conv_out = Conv2d::new(SCORE_WIDTH, 1, &mut r);
        let flat = net.flat_params();
        let mut other = ScoreNetwork::new(1, 2, &mut rng(999)).unwrap();
        other.load_flat_params(&flat).unwrap();
        let x = random_image(1, 8, 8, &mut r);
        assert_eq!(
            net.predict_noise(&x, 4, Some(1)).unwrap(),
            other.predict_noise(&x, 4, Some(1)).unwrap()
        );
        assert!(other.load_flat_params(&flat[1..]).is_err());
    }
}
