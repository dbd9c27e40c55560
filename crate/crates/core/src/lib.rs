//! Out-of-distribution detection for images by diffusion re-synthesis.
//!
//! The pipeline: a small denoising diffusion model is trained on in-distribution
//! images only. At detection time an input is pushed up the noise chain with
//! deterministic DDIM inversion, then pulled back down under label guidance
//! (classifier gradients or classifier-free guidance). In-distribution inputs
//! survive the round trip; semantically mismatched inputs come back visibly
//! altered, and image/feature similarity metrics turn that into a score.
//!
//! The crate is `no_std`-compatible (`alloc` required): it holds the pure
//! computation only. Persistence, file formats, and the command-line driver
//! live in the companion `resynth-cli` crate.
//!
//! Module map:
//! - [`rng`]: splittable, counter-addressed random streams
//! - [`image`]: the pixel/feature buffer type shared by everything
//! - [`synth`]: synthetic labeled shape datasets
//! - [`schedule`]: cumulative noise schedules and subsequence selection
//! - [`diffusion`]: forward noising, DDIM denoise/invert steps, trajectories
//! - [`nn`]: score network and classifier with hand-rolled backprop
//! - [`guidance`]: classifier guidance, cutout-averaged gradients,
//!   classifier-free guidance, and CAM-masked guidance
//! - [`early_stop`]: degradation-monitored inversion
//! - [`similarity`]: PSNR, L2, logit distance, feature-similarity distance
//! - [`detect`]: per-sample detection records, baselines, tandem combination
//! - [`eval`]: AUROC, FPR at fixed TPR, parameter sweeps
//! - [`diag`]: classifier-accuracy-under-noise diagnostics

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod detect;
pub mod diag;
pub mod diffusion;
pub mod early_stop;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod image;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod similarity;
pub mod synth;

/// Class label index. In-distribution classes come first and are contiguous
/// from 0; out-of-distribution classes follow.
pub type ClassId = usize;

pub use error::{Error, Result};
pub use image::Image;
pub use rng::RngStream;
pub use schedule::NoiseSchedule;
