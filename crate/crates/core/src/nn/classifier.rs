//! Small CNN classifier, its trainer, and Grad-CAM attribution.
//!
//! Architecture: three 3x3 convolution + SiLU stages with 2x2 average
//! pooling after the first two (so a 16x16 input reaches 4x4), global
//! average pooling, and a dense head to the class logits. The deepest
//! post-SiLU activation map doubles as the attribution layer for Grad-CAM
//! and as the top of the feature stack used by feature-space distances.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;
use crate::ClassId;

use super::layers::{
    avg_pool2_backward, avg_pool2_forward, global_avg_pool, global_avg_pool_backward,
    silu_backward, silu_forward, upsample_bilinear, Conv2d, Conv2dGrad, Dense, DenseGrad,
};
use super::Adam;

pub const CLS_WIDTHS: [usize; 3] = [12, 24, 32];

/// The classifier network.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub in_channels: usize,
    pub n_classes: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Dense,
}

/// Forward activations needed for backprop and attribution.
pub struct ClassifierCache {
    x: Image,
    a1: Image,
    s1: Image,
    p1: Image,
    a2: Image,
    s2: Image,
    p2: Image,
    a3: Image,
    s3: Image,
    pooled: Vec<f64>,
}

/// Parameter gradients in declaration order.
pub struct ClassifierGrads {
    conv1: Conv2dGrad,
    conv2: Conv2dGrad,
    conv3: Conv2dGrad,
    head: DenseGrad,
}

/// Index of the largest value, preferring the lowest index on exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - log_sum).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|v| v.exp()).collect()
}

impl Classifier {
    pub fn new(in_channels: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        if in_channels == 0 || n_classes < 2 {
            return Err(Error::config("classifier needs >= 1 channel and >= 2 classes"));
        }
        let mut init = rng.split("cls_init", 0);
        Ok(Classifier {
            in_channels,
            n_classes,
            conv1: Conv2d::new(in_channels, CLS_WIDTHS[0], &mut init),
            conv2: Conv2d::new(CLS_WIDTHS[0], CLS_WIDTHS[1], &mut init),
            conv3: Conv2d::new(CLS_WIDTHS[1], CLS_WIDTHS[2], &mut init),
            head: Dense::new(CLS_WIDTHS[2], n_classes, &mut init),
        })
    }

    pub fn forward_cached(&self, x: &Image) -> Result<(Vec<f64>, ClassifierCache)> {
        if x.channels() != self.in_channels {
            return Err(Error::arg(alloc::format!(
                "classifier expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let a1 = self.conv1.forward(x)?;
        let s1 = silu_forward(&a1);
        let p1 = avg_pool2_forward(&s1)?;
        let a2 = self.conv2.forward(&p1)?;
        let s2 = silu_forward(&a2);
        let p2 = avg_pool2_forward(&s2)?;
        let a3 = self.conv3.forward(&p2)?;
        let s3 = silu_forward(&a3);
        let pooled = global_avg_pool(&s3);
        let logits = self.head.forward(&pooled)?;
        Ok((
            logits,
            ClassifierCache {
                x: x.clone(),
                a1,
                s1,
                p1,
                a2,
                s2,
                p2,
                a3,
                s3,
                pooled,
            },
        ))
    }

    pub fn logits(&self, x: &Image) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn zero_grads(&self) -> ClassifierGrads {
        ClassifierGrads {
            conv1: self.conv1.zero_grad(),
            conv2: self.conv2.zero_grad(),
            conv3: self.conv3.zero_grad(),
            head: self.head.zero_grad(),
        }
    }

    /// Backpropagates a logit-space gradient to the input image, accumulating
    /// parameter gradients along the way.
    pub fn backward(
        &self,
        cache: &ClassifierCache,
        dlogits: &[f64],
        grads: &mut ClassifierGrads,
    ) -> Result<Image> {
        let dpooled = self.head.backward(&cache.pooled, dlogits, &mut grads.head)?;
        let ds3 = global_avg_pool_backward(cache.s3.shape(), &dpooled)?;
        let da3 = silu_backward(&cache.a3, &ds3)?;
        let dp2 = self.conv3.backward(&cache.p2, &da3, &mut grads.conv3)?;
        let ds2 = avg_pool2_backward(cache.s2.shape(), &dp2)?;
        let da2 = silu_backward(&cache.a2, &ds2)?;
        let dp1 = self.conv2.backward(&cache.p1, &da2, &mut grads.conv2)?;
        let ds1 = avg_pool2_backward(cache.s1.shape(), &dp1)?;
        let da1 = silu_backward(&cache.a1, &ds1)?;
        self.conv1.backward(&cache.x, &da1, &mut grads.conv1)
    }

    /// Gradient of `log p(y | x)` with respect to the input pixels.
    pub fn input_log_prob_grad(&self, x: &Image, y: ClassId) -> Result<Image> {
        if y >= self.n_classes {
            return Err(Error::arg(alloc::format!(
                "label {y} out of range ({})",
                self.n_classes
            )));
        }
        let (logits, cache) = self.forward_cached(x)?;
        let probs = softmax(&logits);
        let mut dlogits = probs;
        for (j, d) in dlogits.iter_mut().enumerate() {
            *d = if j == y { 1.0 - *d } else { -*d };
        }
        let mut grads = self.zero_grads();
        self.backward(&cache, &dlogits, &mut grads)
    }

    /// Post-SiLU activation maps, shallow to deep. Callers prepend the raw
    /// image when a pixel layer is wanted.
    pub fn feature_stack(&self, x: &Image) -> Result<Vec<Image>> {
        let (_, cache) = self.forward_cached(x)?;
        Ok(vec![cache.s1, cache.s2, cache.s3])
    }

    /// Grad-CAM attribution map for class `y`, bilinearly upsampled to the
    /// input resolution, rectified, and scaled to a maximum of 1 (all zeros
    /// if no positive evidence survives rectification).
    pub fn grad_cam(&self, x: &Image, y: ClassId) -> Result<Image> {
        if y >= self.n_classes {
            return Err(Error::arg(alloc::format!(
                "label {y} out of range ({})",
                self.n_classes
            )));
        }
        let (_, cache) = self.forward_cached(x)?;
        // Gradient of the target logit w.r.t. the deepest activation map,
        // channel-averaged into per-channel weights.
        let mut dlogits = vec![0.0; self.n_classes];
        dlogits[y] = 1.0;
        let mut head_g = self.head.zero_grad();
        let dpooled = self.head.backward(&cache.pooled, &dlogits, &mut head_g)?;
        let ds3 = global_avg_pool_backward(cache.s3.shape(), &dpooled)?;
        let weights: Vec<f64> = (0..cache.s3.channels())
            .map(|c| {
                let ch = ds3.channel(c);
                ch.iter().sum::<f64>() / ch.len() as f64
            })
            .collect();

        let (_, fh, fw) = cache.s3.shape();
        let mut cam = Image::zeros(1, fh, fw);
        for (c, &w) in weights.iter().enumerate() {
            for (dst, &v) in cam.channel_mut(0).iter_mut().zip(cache.s3.channel(c)) {
                *dst += w * v;
            }
        }
        for v in cam.as_mut_slice() {
            *v = v.max(0.0);
        }
        let mut up = upsample_bilinear(&cam, x.height(), x.width());
        let max = up.as_slice().iter().cloned().fold(0.0f64, f64::max);
        if max > 1e-12 {
            up.scale(1.0 / max);
        }
        Ok(up)
    }

    fn adam_apply(&mut self, opt: &mut Adam, grads: &ClassifierGrads) -> Result<()> {
        opt.update(0, &mut self.conv1.weight, &grads.conv1.weight)?;
        opt.update(1, &mut self.conv1.bias, &grads.conv1.bias)?;
        opt.update(2, &mut self.conv2.weight, &grads.conv2.weight)?;
        opt.update(3, &mut self.conv2.bias, &grads.conv2.bias)?;
        opt.update(4, &mut self.conv3.weight, &grads.conv3.weight)?;
        opt.update(5, &mut self.conv3.bias, &grads.conv3.bias)?;
        opt.update(6, &mut self.head.weight, &grads.head.weight)?;
        opt.update(7, &mut self.head.bias, &grads.head.bias)?;
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.head.weight,
            &self.head.bias,
        ] {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flat_params().len();
        if flat.len() != expected {
            return Err(Error::arg(alloc::format!(
                "parameter blob has {} values, classifier needs {expected}",
                flat.len()
            )));
        }
        let mut pos = 0;
        for t in [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ] {
            let n = t.len();
            t.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(())
    }

    pub fn snap_to_f32(&mut self) {
        self.conv1.snap_to_f32();
        self.conv2.snap_to_f32();
        self.conv3.snap_to_f32();
        self.head.snap_to_f32();
    }
}

/// Training options for [`train_classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 2e-3,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("classifier training needs epochs >= 1, batch >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("classifier training lr must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a classifier training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrainStats {
    /// Mean cross-entropy per batch, in step order.
    pub loss_curve: Vec<f64>,
}

fn shuffle(indices: &mut [usize], rng: &mut RngStream) {
    for i in (1..indices.len()).rev() {
        let j = rng.next_below((i + 1) as u64) as usize;
        indices.swap(i, j);
    }
}

/// Per-example training corruption: half the draws keep the image clean,
/// a quarter smooth it, a quarter add mild Gaussian noise.
///
/// The detector scores reconstructions that come back slightly blurry or
/// hazy, so the features have to stay informative on such inputs; training
/// only on pristine renders makes the logits collapse to noise there.
fn augment(x: &Image, rng: &mut RngStream) -> Option<Image> {
    let u = rng.next_uniform();
    if u < 0.5 {
        None
    } else if u < 0.75 {
        let sigma = 0.5 + 0.7 * rng.next_uniform();
        Some(x.smoothed(sigma))
    } else {
        let std = 0.05 + 0.2 * rng.next_uniform();
        let mut out = x.clone();
        out.add_scaled(&x.noise_like(rng), std);
        Some(out)
    }
}

/// Trains with the cross-entropy objective on labeled images, lightly
/// corrupting half of each epoch's examples (see [`augment`]).
/// Parameters are rounded to `f32` values at the end so checkpoints
/// round-trip exactly.
pub fn train_classifier(
    net: &mut Classifier,
    data: &[(&Image, ClassId)],
    cfg: &ClassifierTrainConfig,
    root: &RngStream,
) -> Result<ClassifierTrainStats> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("classifier training set is empty"));
    }
    for (img, label) in data {
        if img.channels() != net.in_channels {
            return Err(Error::config("classifier training image channel mismatch"));
        }
        if *label >= net.n_classes {
            return Err(Error::config(alloc::format!(
                "classifier training label {label} out of range ({})",
                net.n_classes
            )));
        }
    }

    let mut opt = Adam::new(cfg.lr);
    let mut loss_curve = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = root.split("epoch", epoch as u64).split("shuffle", 0);
        shuffle(&mut order, &mut shuffle_rng);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = net.zero_grads();
            let mut batch_loss = 0.0;
            for &sample_idx in batch {
                let (x, label) = data[sample_idx];
                let mut aug_rng = root
                    .split("epoch", epoch as u64)
                    .split("augment", sample_idx as u64);
                let corrupted = augment(x, &mut aug_rng);
                let x = corrupted.as_ref().unwrap_or(x);
                let (logits, cache) = net.forward_cached(x)?;
                let log_probs = log_softmax(&logits);
                batch_loss -= log_probs[label];
                // d(-log p_y)/d logits = softmax - onehot, averaged over the
                // batch.
                let scale = 1.0 / batch.len() as f64;
                let dlogits: Vec<f64> = log_probs
                    .iter()
                    .enumerate()
                    .map(|(j, lp)| (lp.exp() - if j == label { 1.0 } else { 0.0 }) * scale)
                    .collect();
                net.backward(&cache, &dlogits, &mut grads)?;
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
    Ok(ClassifierTrainStats { loss_curve })
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(net: &Classifier, data: &[(&Image, ClassId)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("accuracy needs at least one sample"));
    }
    let mut hits = 0usize;
    for (x, label) in data {
        if argmax(&net.logits(x)?) == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
