//! Diagnostic commands: each produces one CSV that answers a specific
//! question about the trained models (how fast classification degrades
//! under noise, how reconstruction quality decays along the trajectory,
//! and how detection quality responds to the main knobs).
//!
//! Sweeps reuse the detection stage's random stream, so two sweep points
//! differ only through the knob under study, and the point matching the
//! run config reproduces the `detect` command's numbers exactly.

use std::path::PathBuf;
use std::time::Instant;

use resynth_core::detect::DetectorModels;
use resynth_core::diffusion::{estimate_x0, forward_diffuse, NoisePredictor, SamplerConfig};
use resynth_core::early_stop::{invert_monitored, EarlyStopConfig};
use resynth_core::eval::median;
use resynth_core::guidance::{GradInput, GuidanceMode};
use resynth_core::nn::argmax;
use resynth_core::schedule::tau;
use resynth_core::synth::{Dataset, Distribution, LabeledImage, Split};
use resynth_core::RngStream;

use crate::config::{RunConfig, ThresholdSpec};
use crate::driver::{
    eval_records, load_classifier_checked, load_dataset_checked, load_score_checked,
    maybe_load_classifier, resolve_detector, run_detection, schedule_of,
};
use crate::error::{CliError, Result};
use crate::manifest::{stage_entry, Manifest};
use crate::report::{opt_cell, CsvBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagKind {
    AccVsT,
    DegradationCurves,
    CutpointSweep,
    StepsSweep,
    AesThresholdTable,
    CleangradAblation,
}

impl DiagKind {
    pub const ALL: [DiagKind; 6] = [
        DiagKind::AccVsT,
        DiagKind::DegradationCurves,
        DiagKind::CutpointSweep,
        DiagKind::StepsSweep,
        DiagKind::AesThresholdTable,
        DiagKind::CleangradAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DiagKind::AccVsT => "acc-vs-t",
            DiagKind::DegradationCurves => "degradation-curves",
            DiagKind::CutpointSweep => "cutpoint-sweep",
            DiagKind::StepsSweep => "steps-sweep",
            DiagKind::AesThresholdTable => "aes-threshold-table",
            DiagKind::CleangradAblation => "cleangrad-ablation",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let norm = text.replace('_', "-");
        for kind in DiagKind::ALL {
            if kind.name() == norm {
                return Ok(kind);
            }
        }
        Err(CliError::Config(format!(
            "unknown diagnostic '{text}' (expected one of: {})",
            DiagKind::ALL.map(|k| k.name()).join(", ")
        )))
    }
}

pub fn cmd_diagnose(cfg: &RunConfig, kind: DiagKind) -> Result<PathBuf> {
    cfg.validate()?;
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;

    let (csv, notes) = match kind {
        DiagKind::AccVsT => diag_acc_vs_t(cfg, &manifest)?,
        DiagKind::DegradationCurves => diag_degradation_curves(cfg, &manifest)?,
        DiagKind::CutpointSweep => diag_cutpoint_sweep(cfg, &manifest)?,
        DiagKind::StepsSweep => diag_steps_sweep(cfg, &manifest)?,
        DiagKind::AesThresholdTable => diag_aes_threshold_table(cfg, &manifest)?,
        DiagKind::CleangradAblation => diag_cleangrad_ablation(cfg, &manifest)?,
    };

    let path = cfg
        .paths
        .out_dir
        .join(format!("diag_{}.csv", kind.name().replace('-', "_")));
    crate::bytes::write_atomic(&path, csv.as_bytes())?;
    let entry = stage_entry(
        &format!("diagnose-{}", kind.name()),
        started.elapsed().as_millis(),
        &[path.clone()],
        notes,
    )?;
    manifest.record_config(cfg);
    manifest.upsert_stage(entry);
    manifest.save(&cfg.paths.out_dir)?;
    println!("diagnose: wrote {}", path.display());
    Ok(path)
}

fn ind_val_images(ds: &Dataset) -> Vec<&LabeledImage> {
    ds.images
        .iter()
        .filter(|img| img.split == Split::Val && img.dist == Distribution::InD)
        .collect()
}

/// Classification accuracy on noised validation images across timesteps,
/// comparing the raw noisy input against its one-shot clean estimate. The
/// same noise draw serves both modes at each timestep, so the two columns
/// differ only through the denoising.
fn diag_acc_vs_t(cfg: &RunConfig, manifest: &Manifest) -> Result<(String, Vec<(String, String)>)> {
    let ds = load_dataset_checked(cfg, manifest)?;
    let score = load_score_checked(cfg, manifest)?;
    let classifier = load_classifier_checked(cfg, manifest)?;
    let schedule = schedule_of(cfg)?;

    let images = ind_val_images(&ds);
    if images.is_empty() {
        return Err(CliError::Config(
            "acc-vs-t needs in-distribution validation images".into(),
        ));
    }
    let root = RngStream::new(cfg.seed).split("diag-acc", 0);

    let mut csv = CsvBuilder::new(&["t", "raw_accuracy", "xhat0_accuracy"]);
    for &t in &cfg.diag.timesteps {
        if t > schedule.t_max() {
            return Err(CliError::Config(format!(
                "diag.timesteps entry {t} exceeds schedule.t_max {}",
                schedule.t_max()
            )));
        }
        let mut raw_hits = 0usize;
        let mut xhat_hits = 0usize;
        for (i, img) in images.iter().enumerate() {
            let mut rng = root.split("noise", i as u64).split("t", t as u64);
            let (x_t, x_hat) = if t == 0 {
                (img.image.clone(), img.image.clone())
            } else {
                let noise = img.image.noise_like(&mut rng);
                let x_t = forward_diffuse(&img.image, t, &schedule, &noise)?;
                let eps_hat = score.predict_noise(&x_t, t, None)?;
                let x_hat = estimate_x0(&x_t, &eps_hat, t, &schedule)?;
                (x_t, x_hat)
            };
            if argmax(&classifier.logits(&x_t)?) == img.label {
                raw_hits += 1;
            }
            if argmax(&classifier.logits(&x_hat)?) == img.label {
                xhat_hits += 1;
            }
        }
        let n = images.len() as f64;
        csv.row(&[
            t.to_string(),
            (raw_hits as f64 / n).to_string(),
            (xhat_hits as f64 / n).to_string(),
        ]);
    }
    Ok((
        csv.finish(),
        vec![("samples".into(), images.len().to_string())],
    ))
}

/// Reconstruction quality along the unguided inversion, medians per
/// trajectory point for in-distribution versus out-of-distribution samples.
/// Feature-distance columns stay empty without a classifier checkpoint.
fn diag_degradation_curves(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<(String, Vec<(String, String)>)> {
    let ds = load_dataset_checked(cfg, manifest)?;
    let score = load_score_checked(cfg, manifest)?;
    let classifier = if cfg.paths.classifier_model.exists() {
        Some(load_classifier_checked(cfg, manifest)?)
    } else {
        None
    };
    let schedule = schedule_of(cfg)?;
    let tau_steps = tau(&schedule, cfg.detect.tau_len)?;

    let mut samples: Vec<&LabeledImage> = Vec::new();
    let per_class = cfg.diag.curve_samples;
    for (label, dist, split) in ds
        .spec
        .ind_classes
        .iter()
        .enumerate()
        .map(|(l, _)| (l, Distribution::InD, Split::Val))
        .chain(
            ds.spec
                .ood_classes
                .iter()
                .enumerate()
                .map(|(i, _)| (ds.spec.ind_classes.len() + i, Distribution::Ood, Split::Test)),
        )
    {
        samples.extend(
            ds.images
                .iter()
                .filter(|img| img.split == split && img.dist == dist && img.label == label)
                .take(per_class),
        );
    }
    if samples.is_empty() {
        return Err(CliError::Config(
            "degradation-curves needs validation and test images (set diag.curve_samples > 0)"
                .into(),
        ));
    }

    let probe = EarlyStopConfig {
        t_max: schedule.t_max(),
        psnr_threshold: None,
        fsd_threshold: classifier.as_ref().map(|_| f64::MAX),
        combine: cfg.detect.stop_combine,
    };
    let sampler = SamplerConfig {
        eta: cfg.detect.eta,
    };

    let mut ind_psnr: Vec<Vec<f64>> = Vec::new();
    let mut ood_psnr: Vec<Vec<f64>> = Vec::new();
    let mut ind_fsd: Vec<Vec<f64>> = Vec::new();
    let mut ood_fsd: Vec<Vec<f64>> = Vec::new();
    let mut ts: Vec<usize> = Vec::new();
    for img in &samples {
        let (_, trace) = invert_monitored(
            &img.image,
            &score,
            None,
            &schedule,
            &tau_steps,
            &sampler,
            &probe,
            classifier.as_ref(),
        )?;
        if ts.is_empty() {
            ts = trace.records.iter().map(|r| r.t).collect();
            let empty = vec![Vec::new(); ts.len()];
            ind_psnr = empty.clone();
            ood_psnr = empty.clone();
            ind_fsd = empty.clone();
            ood_fsd = empty;
        }
        for (k, rec) in trace.records.iter().enumerate() {
            let (psnr_bucket, fsd_bucket) = match img.dist {
                Distribution::InD => (&mut ind_psnr[k], &mut ind_fsd[k]),
                Distribution::Ood => (&mut ood_psnr[k], &mut ood_fsd[k]),
            };
            psnr_bucket.push(rec.psnr);
            if let Some(f) = rec.fsd {
                fsd_bucket.push(f);
            }
        }
    }

    let med = |xs: &[f64]| -> Result<Option<f64>> {
        if xs.is_empty() {
            Ok(None)
        } else {
            Ok(Some(median(xs)?))
        }
    };
    let mut csv = CsvBuilder::new(&[
        "t",
        "ind_psnr_median",
        "ood_psnr_median",
        "ind_fsd_median",
        "ood_fsd_median",
    ]);
    for (k, &t) in ts.iter().enumerate() {
        csv.row(&[
            t.to_string(),
            opt_cell(med(&ind_psnr[k])?),
            opt_cell(med(&ood_psnr[k])?),
            opt_cell(med(&ind_fsd[k])?),
            opt_cell(med(&ood_fsd[k])?),
        ]);
    }
    Ok((
        csv.finish(),
        vec![("samples".into(), samples.len().to_string())],
    ))
}

/// Shared driver for the sweep diagnostics: runs full test-split detection
/// under a modified detect section per row.
fn sweep_rows(
    cfg: &RunConfig,
    manifest: &Manifest,
    mutate: impl Fn(&mut crate::config::DetectSection, f64),
    values: &[f64],
) -> Result<Vec<(f64, resynth_core::eval::EvalReport)>> {
    if values.is_empty() {
        return Err(CliError::Config("the sweep value list is empty".into()));
    }
    let ds = load_dataset_checked(cfg, manifest)?;
    let score = load_score_checked(cfg, manifest)?;
    let schedule = schedule_of(cfg)?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut detect = cfg.detect.clone();
        mutate(&mut detect, v);
        let classifier = maybe_load_classifier(cfg, &detect, manifest)?;
        let models = DetectorModels {
            score: &score,
            classifier: classifier.as_ref(),
        };
        let (detector, _) = resolve_detector(&detect, &models, &schedule, &ds)?;
        let root = RngStream::new(cfg.seed).split("detect", 0);
        let records = run_detection(&detector, &models, &schedule, &ds, Split::Test, &root)?;
        rows.push((v, eval_records(&records)?));
    }
    Ok(rows)
}

fn eval_sweep_csv(knob: &str, rows: &[(f64, resynth_core::eval::EvalReport)]) -> String {
    let mut csv = CsvBuilder::new(&[
        knob,
        "auroc",
        "fpr_at_95",
        "threshold_at_95",
        "n_ind",
        "n_ood",
    ]);
    for (v, report) in rows {
        csv.row(&[
            v.to_string(),
            report.auroc.to_string(),
            report.fpr_at_95.to_string(),
            report.threshold_at_95.to_string(),
            report.n_ind.to_string(),
            report.n_ood.to_string(),
        ]);
    }
    csv.finish()
}

/// Detection quality of the masked classifier-free path across attention
/// cut-points (0 disables the mask).
fn diag_cutpoint_sweep(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<(String, Vec<(String, String)>)> {
    let rows = sweep_rows(
        cfg,
        manifest,
        |d, v| {
            d.mode = GuidanceMode::ClassifierFree;
            d.cam_cutpoint = v;
        },
        &cfg.diag.cutpoints,
    )?;
    Ok((eval_sweep_csv("cutpoint", &rows), vec![]))
}

/// Detection quality across trajectory lengths under the configured
/// guidance mode.
fn diag_steps_sweep(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<(String, Vec<(String, String)>)> {
    let values: Vec<f64> = cfg.diag.tau_lens.iter().map(|&n| n as f64).collect();
    let rows = sweep_rows(
        cfg,
        manifest,
        |d, v| {
            d.tau_len = v as usize;
        },
        &values,
    )?;
    Ok((eval_sweep_csv("tau_len", &rows), vec![]))
}

/// Detection quality and stopping behavior as the calibrated early-stop
/// thresholds are scaled up and down.
fn diag_aes_threshold_table(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<(String, Vec<(String, String)>)> {
    let ds = load_dataset_checked(cfg, manifest)?;
    let score = load_score_checked(cfg, manifest)?;
    let mut base_detect = cfg.detect.clone();
    base_detect.early_stop = true;
    if matches!(base_detect.psnr_stop, ThresholdSpec::Off)
        && matches!(base_detect.fsd_stop, ThresholdSpec::Off)
    {
        return Err(CliError::Config(
            "aes-threshold-table needs an early-stop criterion; set \
             detect.early_stop.psnr_threshold or detect.early_stop.fsd_threshold"
                .into(),
        ));
    }
    let classifier = maybe_load_classifier(cfg, &base_detect, manifest)?;
    let models = DetectorModels {
        score: &score,
        classifier: classifier.as_ref(),
    };
    let schedule = schedule_of(cfg)?;
    let (base, _) = resolve_detector(&base_detect, &models, &schedule, &ds)?;
    let stop = base.early_stop.as_ref().unwrap();
    let (psnr_base, fsd_base) = (stop.psnr_threshold, stop.fsd_threshold);

    let mut csv = CsvBuilder::new(&[
        "multiplier",
        "psnr_threshold",
        "fsd_threshold",
        "median_t_stop_ind",
        "median_t_stop_ood",
        "auroc",
        "fpr_at_95",
    ]);
    let mut notes = vec![(
        "base_psnr_threshold".to_string(),
        opt_cell(psnr_base),
    )];
    notes.push(("base_fsd_threshold".to_string(), opt_cell(fsd_base)));
    for &m in &cfg.diag.aes_multipliers {
        let mut detect = base_detect.clone();
        detect.psnr_stop = match psnr_base {
            Some(p) => ThresholdSpec::Fixed(p * m),
            None => ThresholdSpec::Off,
        };
        detect.fsd_stop = match fsd_base {
            Some(f) => ThresholdSpec::Fixed(f * m),
            None => ThresholdSpec::Off,
        };
        let (detector, _) = resolve_detector(&detect, &models, &schedule, &ds)?;
        let root = RngStream::new(cfg.seed).split("detect", 0);
        let records = run_detection(&detector, &models, &schedule, &ds, Split::Test, &root)?;
        let stops =
            |dist: Distribution| -> Vec<f64> {
                records
                    .iter()
                    .filter(|r| r.truth == dist)
                    .map(|r| r.t_stop as f64)
                    .collect()
            };
        let report = eval_records(&records)?;
        csv.row(&[
            m.to_string(),
            opt_cell(psnr_base.map(|p| p * m)),
            opt_cell(fsd_base.map(|f| f * m)),
            median(&stops(Distribution::InD))?.to_string(),
            median(&stops(Distribution::Ood))?.to_string(),
            report.auroc.to_string(),
            report.fpr_at_95.to_string(),
        ]);
    }
    Ok((csv.finish(), notes))
}

/// The two-by-two grid over the clean-gradient ingredients: gradients on
/// the raw noisy input versus the clean estimate, cutout averaging off
/// versus on.
fn diag_cleangrad_ablation(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<(String, Vec<(String, String)>)> {
    if cfg.detect.hole_side == 0 {
        return Err(CliError::Config(
            "cleangrad-ablation needs detect.guidance.hole_side > 0 for its cutout-on cells"
                .into(),
        ));
    }
    let ds = load_dataset_checked(cfg, manifest)?;
    let score = load_score_checked(cfg, manifest)?;
    let schedule = schedule_of(cfg)?;

    let mut csv = CsvBuilder::new(&["grad_input", "cutout", "auroc", "fpr_at_95"]);
    for input in [GradInput::RawXt, GradInput::Xhat0] {
        for cutout_on in [false, true] {
            let mut detect = cfg.detect.clone();
            detect.mode = GuidanceMode::Classifier;
            detect.grad_input = input;
            detect.hole_side = if cutout_on { cfg.detect.hole_side } else { 0 };
            let classifier = maybe_load_classifier(cfg, &detect, manifest)?;
            let models = DetectorModels {
                score: &score,
                classifier: classifier.as_ref(),
            };
            let (detector, _) = resolve_detector(&detect, &models, &schedule, &ds)?;
            let root = RngStream::new(cfg.seed).split("detect", 0);
            let records =
                run_detection(&detector, &models, &schedule, &ds, Split::Test, &root)?;
            let report = eval_records(&records)?;
            csv.row(&[
                input.name().to_string(),
                if cutout_on { "on" } else { "off" }.to_string(),
                report.auroc.to_string(),
                report.fpr_at_95.to_string(),
            ]);
        }
    }
    Ok((csv.finish(), vec![]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for kind in DiagKind::ALL {
            assert_eq!(DiagKind::parse(kind.name()).unwrap(), kind);
        }
        assert_eq!(
            DiagKind::parse("acc_vs_t").unwrap(),
            DiagKind::AccVsT,
            "underscored spelling is accepted"
        );
        assert!(DiagKind::parse("nope").is_err());
    }
}
