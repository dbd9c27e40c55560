//! The pipeline commands: dataset generation, training, detection, and
//! evaluation. Every command checks its prerequisites (naming the stage
//! that produces a missing one), writes its artifacts atomically, and
//! records them in the run manifest with checksums.
//!
//! All randomness flows from `run.seed` through named stream splits, one
//! stream per stage (and per sample inside detection), so rerunning any
//! command reproduces its outputs byte for byte and changing one stage's
//! inputs never perturbs another's draws.

use std::path::{Path, PathBuf};
use std::time::Instant;

use resynth_core::detect::{score_sample, DetectionRecord, DetectorConfig, DetectorModels};
use resynth_core::diffusion::SamplerConfig;
use resynth_core::early_stop::{default_t_max, invert_monitored, EarlyStopConfig};
use resynth_core::eval::{evaluate, median, EvalReport};
use resynth_core::guidance::{CleanGradConfig, GuidanceConfig, GuidanceMode};
use resynth_core::nn::{accuracy, train_classifier, train_score, Classifier, ScoreNetwork};
use resynth_core::schedule::{make_schedule, tau, NoiseSchedule};
use resynth_core::similarity::Metric;
use resynth_core::synth::{generate_dataset, Dataset, Distribution, Split};
use resynth_core::RngStream;

use crate::config::{DetectSection, FillSpec, RunConfig, ThresholdSpec};
use crate::dataset_io::{load_dataset, save_dataset};
use crate::error::{CliError, Result};
use crate::imgdump::dump_syntheses;
use crate::manifest::{stage_entry, Manifest};
use crate::model_io::{
    load_classifier, load_score, save_classifier, save_score, ModelHeader, ModelKind,
};
use crate::report::{
    eval_csv_text, eval_summary_text, read_detection_csv, write_detection_csv, write_loss_csv,
    DetectionRow,
};

fn finish_stage(
    cfg: &RunConfig,
    manifest: &mut Manifest,
    name: &str,
    started: Instant,
    artifacts: &[PathBuf],
    notes: Vec<(String, String)>,
) -> Result<()> {
    let entry = stage_entry(name, started.elapsed().as_millis(), artifacts, notes)?;
    manifest.record_config(cfg);
    manifest.upsert_stage(entry);
    manifest.save(&cfg.paths.out_dir)
}

fn require_file(path: &Path, what: &str, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(CliError::Prerequisite(format!(
            "{what} '{}' not found; run {produced_by} first",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_dataset_checked(cfg: &RunConfig, manifest: &Manifest) -> Result<Dataset> {
    let path = &cfg.paths.dataset;
    require_file(path, "dataset", "gen-data")?;
    manifest.verify_artifact(path)?;
    let ds = load_dataset(path)?;
    if ds.spec != cfg.data {
        return Err(CliError::Config(format!(
            "the data.* keys differ from the spec stored in '{}'; \
             rerun gen-data or restore the config",
            path.display()
        )));
    }
    Ok(ds)
}

fn check_model_header(cfg: &RunConfig, header: ModelHeader, path: &Path) -> Result<()> {
    let expect_classes = cfg.data.ind_classes.len();
    if header.image_side != cfg.data.image_side
        || header.in_channels != cfg.data.channels
        || header.n_classes != expect_classes
    {
        return Err(CliError::Config(format!(
            "{} '{}' was trained for {}x{} channels={} classes={}, but the config wants \
             {}x{} channels={} classes={}; retrain it",
            header.kind.name(),
            path.display(),
            header.image_side,
            header.image_side,
            header.in_channels,
            header.n_classes,
            cfg.data.image_side,
            cfg.data.image_side,
            cfg.data.channels,
            expect_classes,
        )));
    }
    Ok(())
}

pub fn load_score_checked(cfg: &RunConfig, manifest: &Manifest) -> Result<ScoreNetwork> {
    let path = &cfg.paths.score_model;
    require_file(path, "score model", "train-score")?;
    manifest.verify_artifact(path)?;
    let (header, net) = load_score(path)?;
    check_model_header(cfg, header, path)?;
    Ok(net)
}

pub fn load_classifier_checked(cfg: &RunConfig, manifest: &Manifest) -> Result<Classifier> {
    let path = &cfg.paths.classifier_model;
    require_file(path, "classifier model", "train-classifier")?;
    manifest.verify_artifact(path)?;
    let (header, net) = load_classifier(path)?;
    check_model_header(cfg, header, path)?;
    Ok(net)
}

pub fn schedule_of(cfg: &RunConfig) -> Result<NoiseSchedule> {
    Ok(make_schedule(cfg.schedule.t_max, cfg.schedule.kind)?)
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;
    let root = RngStream::new(cfg.seed);
    let ds = generate_dataset(&cfg.data, &root.split("data", 0))?;
    save_dataset(&cfg.paths.dataset, &ds)?;
    finish_stage(
        cfg,
        &mut manifest,
        "gen-data",
        started,
        &[cfg.paths.dataset.clone()],
        vec![("images".into(), ds.images.len().to_string())],
    )?;
    println!(
        "gen-data: wrote {} images ({} classes) to {}",
        ds.images.len(),
        ds.spec.ind_classes.len() + ds.spec.ood_classes.len(),
        cfg.paths.dataset.display()
    );
    Ok(())
}

/// In-distribution train images with their labels, the only data either
/// network ever trains on.
fn ind_train_set(ds: &Dataset) -> Vec<(&resynth_core::Image, usize)> {
    ds.images
        .iter()
        .filter(|img| img.split == Split::Train && img.dist == Distribution::InD)
        .map(|img| (&img.image, img.label))
        .collect()
}

fn ind_val_set(ds: &Dataset) -> Vec<(&resynth_core::Image, usize)> {
    ds.images
        .iter()
        .filter(|img| img.split == Split::Val && img.dist == Distribution::InD)
        .map(|img| (&img.image, img.label))
        .collect()
}

pub fn cmd_train_score(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;
    let ds = load_dataset_checked(cfg, &manifest)?;
    let schedule = schedule_of(cfg)?;
    let root = RngStream::new(cfg.seed);

    let mut init_rng = root.split("score-init", 0);
    let mut net = ScoreNetwork::new(cfg.data.channels, cfg.data.ind_classes.len(), &mut init_rng)?;
    let data = ind_train_set(&ds);
    let stats = train_score(
        &mut net,
        &data,
        &schedule,
        &cfg.train_score,
        &root.split("score-train", 0),
    )?;

    let header = ModelHeader {
        kind: ModelKind::Score,
        in_channels: cfg.data.channels,
        n_classes: cfg.data.ind_classes.len(),
        image_side: cfg.data.image_side,
    };
    save_score(&cfg.paths.score_model, &net, header)?;
    let loss_csv = cfg.paths.out_dir.join("loss_score.csv");
    write_loss_csv(&loss_csv, &stats.loss_curve)?;

    let final_loss = stats.loss_curve.last().copied().unwrap_or(f64::NAN);
    finish_stage(
        cfg,
        &mut manifest,
        "train-score",
        started,
        &[cfg.paths.score_model.clone(), loss_csv],
        vec![("final_loss".into(), final_loss.to_string())],
    )?;
    println!(
        "train-score: {} samples, final batch loss {:.4}, saved {}",
        data.len(),
        final_loss,
        cfg.paths.score_model.display()
    );
    Ok(())
}

pub fn cmd_train_classifier(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;
    let ds = load_dataset_checked(cfg, &manifest)?;
    let root = RngStream::new(cfg.seed);

    let mut init_rng = root.split("cls-init", 0);
    let mut net = Classifier::new(cfg.data.channels, cfg.data.ind_classes.len(), &mut init_rng)?;
    let data = ind_train_set(&ds);
    let stats = train_classifier(
        &mut net,
        &data,
        &cfg.train_classifier,
        &root.split("cls-train", 0),
    )?;
    let train_acc = accuracy(&net, &data)?;
    let val_acc = accuracy(&net, &ind_val_set(&ds))?;

    let header = ModelHeader {
        kind: ModelKind::Classifier,
        in_channels: cfg.data.channels,
        n_classes: cfg.data.ind_classes.len(),
        image_side: cfg.data.image_side,
    };
    save_classifier(&cfg.paths.classifier_model, &net, header)?;
    let loss_csv = cfg.paths.out_dir.join("loss_classifier.csv");
    write_loss_csv(&loss_csv, &stats.loss_curve)?;

    finish_stage(
        cfg,
        &mut manifest,
        "train-classifier",
        started,
        &[cfg.paths.classifier_model.clone(), loss_csv],
        vec![
            ("train_accuracy".into(), train_acc.to_string()),
            ("val_accuracy".into(), val_acc.to_string()),
        ],
    )?;
    println!(
        "train-classifier: train accuracy {:.3}, val accuracy {:.3}, saved {}",
        train_acc,
        val_acc,
        cfg.paths.classifier_model.display()
    );
    Ok(())
}

/// Whether this detection configuration can run at all without a
/// classifier checkpoint.
fn needs_classifier(d: &DetectSection) -> bool {
    d.mode == GuidanceMode::Classifier
        || (d.mode == GuidanceMode::ClassifierFree && d.cam_cutpoint > 0.0)
        || d.label_source == resynth_core::detect::LabelSource::Classifier
        || matches!(d.metric, Metric::LogitsL1 | Metric::Fsd)
        || (d.early_stop && !matches!(d.fsd_stop, ThresholdSpec::Off))
}

/// Loads the classifier when the configuration requires it, and
/// opportunistically when the checkpoint exists (for logit baselines).
pub fn maybe_load_classifier(
    cfg: &RunConfig,
    detect: &DetectSection,
    manifest: &Manifest,
) -> Result<Option<Classifier>> {
    if needs_classifier(detect) {
        return Ok(Some(load_classifier_checked(cfg, manifest)?));
    }
    if cfg.paths.classifier_model.exists() {
        return Ok(Some(load_classifier_checked(cfg, manifest)?));
    }
    Ok(None)
}

/// Calibrates the enabled early-stop thresholds as the median metric value
/// reached at the stop ceiling on the in-distribution validation split,
/// with no threshold active during measurement.
pub fn calibrate_thresholds(
    detect: &DetectSection,
    models: &DetectorModels,
    schedule: &NoiseSchedule,
    ds: &Dataset,
) -> Result<(Option<f64>, Option<f64>)> {
    let tau_steps = tau(schedule, detect.tau_len)?;
    let ceiling = detect
        .stop_t_max
        .unwrap_or_else(|| default_t_max(schedule.t_max()));
    let want_fsd = matches!(detect.fsd_stop, ThresholdSpec::Auto);
    let probe_cfg = EarlyStopConfig {
        t_max: ceiling,
        psnr_threshold: None,
        // A never-firing threshold makes the trace carry feature distances.
        fsd_threshold: if want_fsd { Some(f64::MAX) } else { None },
        combine: detect.stop_combine,
    };
    let sampler = SamplerConfig { eta: detect.eta };
    let mut psnrs = Vec::new();
    let mut fsds = Vec::new();
    for img in ds.images.iter() {
        if img.split != Split::Val || img.dist != Distribution::InD {
            continue;
        }
        let (_, trace) = invert_monitored(
            &img.image,
            models.score,
            None,
            schedule,
            &tau_steps,
            &sampler,
            &probe_cfg,
            if want_fsd { models.classifier } else { None },
        )?;
        let last = trace
            .records
            .last()
            .ok_or_else(|| CliError::Numerical("empty calibration trace".into()))?;
        psnrs.push(last.psnr);
        if let Some(f) = last.fsd {
            fsds.push(f);
        }
    }
    if psnrs.is_empty() {
        return Err(CliError::Prerequisite(
            "threshold calibration needs in-distribution validation images; \
             the dataset has none (run gen-data with data.val_per_class > 0)"
            .into(),
        ));
    }
    let psnr_cal = match detect.psnr_stop {
        ThresholdSpec::Auto => Some(median(&psnrs)?),
        _ => None,
    };
    let fsd_cal = match detect.fsd_stop {
        ThresholdSpec::Auto => Some(median(&fsds)?),
        _ => None,
    };
    Ok((psnr_cal, fsd_cal))
}

/// Lowers the config's detect section to a core detector configuration,
/// resolving `auto` fill from the train mean and `auto` thresholds by
/// calibration. Returns notes describing every resolved value.
pub fn resolve_detector(
    detect: &DetectSection,
    models: &DetectorModels,
    schedule: &NoiseSchedule,
    ds: &Dataset,
) -> Result<(DetectorConfig, Vec<(String, String)>)> {
    let mut notes = Vec::new();
    let fill = match detect.fill {
        FillSpec::Value(v) => v,
        FillSpec::Auto => {
            let mean = ds.train_mean();
            notes.push(("fill".into(), mean.to_string()));
            mean
        }
    };

    let early_stop = if detect.early_stop {
        let needs_calibration = matches!(detect.psnr_stop, ThresholdSpec::Auto)
            || matches!(detect.fsd_stop, ThresholdSpec::Auto);
        let (psnr_cal, fsd_cal) = if needs_calibration {
            calibrate_thresholds(detect, models, schedule, ds)?
        } else {
            (None, None)
        };
        let psnr_threshold = match detect.psnr_stop {
            ThresholdSpec::Off => None,
            ThresholdSpec::Auto => psnr_cal,
            ThresholdSpec::Fixed(v) => Some(v),
        };
        let fsd_threshold = match detect.fsd_stop {
            ThresholdSpec::Off => None,
            ThresholdSpec::Auto => fsd_cal,
            ThresholdSpec::Fixed(v) => Some(v),
        };
        if let Some(p) = psnr_threshold {
            notes.push(("psnr_threshold".into(), p.to_string()));
        }
        if let Some(f) = fsd_threshold {
            notes.push(("fsd_threshold".into(), f.to_string()));
        }
        let ceiling = detect
            .stop_t_max
            .unwrap_or_else(|| default_t_max(schedule.t_max()));
        notes.push(("stop_t_max".into(), ceiling.to_string()));
        Some(EarlyStopConfig {
            t_max: ceiling,
            psnr_threshold,
            fsd_threshold,
            combine: detect.stop_combine,
        })
    } else {
        None
    };

    let guidance = GuidanceConfig {
        mode: detect.mode,
        scale: detect.scale,
        sign: detect.sign,
        clean_grad: CleanGradConfig {
            cutouts: detect.cutouts,
            hole_side: detect.hole_side,
            fill,
            chain: detect.chain,
            input: detect.grad_input,
        },
        omega: detect.omega,
        cam_cutpoint: detect.cam_cutpoint,
    };
    let detector = DetectorConfig {
        guidance,
        sampler: SamplerConfig { eta: detect.eta },
        tau_len: detect.tau_len,
        early_stop,
        metric: detect.metric,
        label_source: detect.label_source,
    };
    detector.validate(schedule, models, ds.spec.image_side, ds.spec.image_side)?;
    Ok((detector, notes))
}

/// Runs detection over one split in dataset order. Sample ids are indices
/// into the full dataset, so they are stable across splits and reruns.
pub fn run_detection(
    detector: &DetectorConfig,
    models: &DetectorModels,
    schedule: &NoiseSchedule,
    ds: &Dataset,
    split: Split,
    root: &RngStream,
) -> Result<Vec<DetectionRecord>> {
    let n_ind = ds.spec.ind_classes.len();
    let mut records = Vec::new();
    for (i, img) in ds.images.iter().enumerate() {
        if img.split != split {
            continue;
        }
        records.push(score_sample(
            detector,
            models,
            schedule,
            i as u64,
            &img.image,
            img.label,
            n_ind,
            root,
        )?);
    }
    if records.is_empty() {
        return Err(CliError::Config(format!(
            "the {} split is empty",
            split.name()
        )));
    }
    Ok(records)
}

/// Splits records by ground truth and evaluates their final scores.
pub fn eval_records(records: &[DetectionRecord]) -> Result<EvalReport> {
    let ind: Vec<f64> = records
        .iter()
        .filter(|r| r.truth == Distribution::InD)
        .map(|r| r.ood_score)
        .collect();
    let ood: Vec<f64> = records
        .iter()
        .filter(|r| r.truth == Distribution::Ood)
        .map(|r| r.ood_score)
        .collect();
    Ok(evaluate(&ind, &ood)?)
}

/// File stem identifying one detection variant, shared by the CSV, the
/// dump directory, and the manifest stage name.
pub fn detect_stem(detect: &DetectSection, split: Split) -> String {
    format!(
        "detect_{}_{}_{}",
        split.name(),
        detect.mode.name(),
        detect.label_source.name()
    )
}

pub fn cmd_detect(cfg: &RunConfig, split: Split) -> Result<PathBuf> {
    cfg.validate()?;
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;
    let ds = load_dataset_checked(cfg, &manifest)?;
    let score = load_score_checked(cfg, &manifest)?;
    let classifier = maybe_load_classifier(cfg, &cfg.detect, &manifest)?;
    let schedule = schedule_of(cfg)?;
    let models = DetectorModels {
        score: &score,
        classifier: classifier.as_ref(),
    };

    let (detector, mut notes) = resolve_detector(&cfg.detect, &models, &schedule, &ds)?;
    let root = RngStream::new(cfg.seed).split("detect", 0);
    let records = run_detection(&detector, &models, &schedule, &ds, split, &root)?;

    let stem = detect_stem(&cfg.detect, split);
    let csv_path = cfg.paths.out_dir.join(format!("{stem}.csv"));
    write_detection_csv(&csv_path, &records)?;
    let mut artifacts = vec![csv_path.clone()];
    if cfg.detect.dump_images {
        let dump_dir = cfg.paths.out_dir.join(format!("dump_{stem}"));
        artifacts.extend(dump_syntheses(&dump_dir, &records)?);
    }

    notes.push(("samples".into(), records.len().to_string()));
    finish_stage(cfg, &mut manifest, &stem, started, &artifacts, notes)?;
    println!(
        "detect: scored {} {} samples ({} guidance, {} labels) -> {}",
        records.len(),
        split.name(),
        cfg.detect.mode.name(),
        cfg.detect.label_source.name(),
        csv_path.display()
    );
    Ok(csv_path)
}

fn scores_by_truth(rows: &[DetectionRow], score: impl Fn(&DetectionRow) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut ind = Vec::new();
    let mut ood = Vec::new();
    for row in rows {
        if let Some(s) = score(row) {
            match row.truth {
                Distribution::InD => ind.push(s),
                Distribution::Ood => ood.push(s),
            }
        }
    }
    (ind, ood)
}

/// The configured baseline's score for a row, oriented so larger means
/// more out-of-distribution.
fn baseline_ood_score(kind: resynth_core::detect::BaselineKind, row: &DetectionRow) -> Option<f64> {
    match kind {
        resynth_core::detect::BaselineKind::Mls => row.mls.map(|v| -v),
        resynth_core::detect::BaselineKind::Ebo => row.ebo,
    }
}

pub fn cmd_eval(cfg: &RunConfig, csv: &Path, band_from: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;
    require_file(csv, "detection CSV", "detect")?;
    manifest.verify_artifact(csv)?;
    let rows = read_detection_csv(csv)?;

    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    let (ind, ood) = scores_by_truth(&rows, |r| Some(r.ood_score));
    reports.push(("detector".into(), evaluate(&ind, &ood)?));

    let (ind_mls, ood_mls) = scores_by_truth(&rows, |r| r.mls.map(|v| -v));
    if ind_mls.len() + ood_mls.len() == rows.len() {
        reports.push(("mls".into(), evaluate(&ind_mls, &ood_mls)?));
        let (ind_ebo, ood_ebo) = scores_by_truth(&rows, |r| r.ebo);
        reports.push(("ebo".into(), evaluate(&ind_ebo, &ood_ebo)?));
    }

    if let Some(val_csv) = band_from {
        require_file(val_csv, "validation detection CSV", "detect")?;
        manifest.verify_artifact(val_csv)?;
        let val_rows = read_detection_csv(val_csv)?;
        let kind = cfg.tandem_baseline;
        let (val_ind, _) = scores_by_truth(&val_rows, |r| baseline_ood_score(kind, r));
        if val_ind.is_empty() {
            return Err(CliError::Config(format!(
                "'{}' has no {} baseline scores to calibrate the tandem band",
                val_csv.display(),
                kind.name()
            )));
        }
        let (lo, hi) = resynth_core::detect::calibrate_band(
            &val_ind,
            resynth_core::detect::TANDEM_BAND_QUANTILES.0,
            resynth_core::detect::TANDEM_BAND_QUANTILES.1,
        )?;
        let tandem_cfg = resynth_core::detect::TandemConfig {
            baseline: kind,
            band: Some((lo, hi)),
        };
        let combined = |row: &DetectionRow| -> Option<f64> {
            let b = baseline_ood_score(kind, row)?;
            resynth_core::detect::tandem_combine(b, row.ood_score, &tandem_cfg).ok()
        };
        let (ind_t, ood_t) = scores_by_truth(&rows, combined);
        if ind_t.len() + ood_t.len() != rows.len() {
            return Err(CliError::Config(format!(
                "'{}' is missing {} baseline scores; tandem needs a classifier-backed run",
                csv.display(),
                kind.name()
            )));
        }
        reports.push(("tandem".into(), evaluate(&ind_t, &ood_t)?));
    }

    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "detection".into());
    let report_csv = cfg.paths.out_dir.join(format!("eval_{stem}.csv"));
    let report_txt = cfg.paths.out_dir.join(format!("eval_{stem}.txt"));
    crate::bytes::write_atomic(&report_csv, eval_csv_text(&reports).as_bytes())?;
    let summary = eval_summary_text(csv, &reports);
    crate::bytes::write_atomic(&report_txt, summary.as_bytes())?;

    finish_stage(
        cfg,
        &mut manifest,
        &format!("eval-{stem}"),
        started,
        &[report_csv, report_txt],
        vec![],
    )?;
    print!("{summary}");
    Ok(())
}
