//! Run configuration: a flat `key = value` text format with dotted section
//! prefixes, chosen so configs diff cleanly and need no parser dependency.
//!
//! Parsing starts from the reference defaults and overrides one key per
//! line, so a config file only needs the keys it changes. Serialization
//! always emits every key; `parse(serialize(c)) == c` exactly.

use std::collections::HashSet;
use std::path::PathBuf;

use resynth_core::detect::{BaselineKind, LabelSource};
use resynth_core::early_stop::StopCombine;
use resynth_core::guidance::{ChainMode, GradInput, GradSign, GuidanceMode};
use resynth_core::nn::{ClassifierTrainConfig, ScoreTrainConfig};
use resynth_core::schedule::ScheduleKind;
use resynth_core::similarity::Metric;
use resynth_core::synth::{DatasetSpec, ShapeClass};

use crate::error::{CliError, Result};

/// Where output files live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub score_model: PathBuf,
    pub classifier_model: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleSection {
    pub t_max: usize,
    pub kind: ScheduleKind,
}

/// Cutout fill intensity: a fixed value or the train-split mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillSpec {
    Auto,
    Value(f64),
}

/// Early-stop threshold for one monitored metric: disabled, calibrated on
/// the in-distribution validation split, or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Off,
    Auto,
    Fixed(f64),
}

/// Detection-path settings; lowered to a core detector configuration once
/// the schedule and dataset are at hand.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectSection {
    pub mode: GuidanceMode,
    pub scale: f64,
    pub sign: GradSign,
    pub cutouts: usize,
    pub hole_side: usize,
    pub fill: FillSpec,
    pub chain: ChainMode,
    pub grad_input: GradInput,
    pub omega: f64,
    pub cam_cutpoint: f64,
    pub eta: f64,
    pub tau_len: usize,
    pub early_stop: bool,
    /// Latest allowed stop timestep; `None` means three fifths of the
    /// schedule length.
    pub stop_t_max: Option<usize>,
    pub psnr_stop: ThresholdSpec,
    pub fsd_stop: ThresholdSpec,
    pub stop_combine: StopCombine,
    pub metric: Metric,
    pub label_source: LabelSource,
    pub dump_images: bool,
}

/// Value grids for the diagnostic commands.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagSection {
    /// Timesteps for the accuracy-vs-noise curve.
    pub timesteps: Vec<usize>,
    /// Images per class used by the curve diagnostics.
    pub curve_samples: usize,
    pub cutpoints: Vec<f64>,
    pub tau_lens: Vec<usize>,
    /// Factors applied to the calibrated early-stop thresholds.
    pub aes_multipliers: Vec<f64>,
}

/// Everything a run needs; one instance drives every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub data: DatasetSpec,
    pub schedule: ScheduleSection,
    pub train_score: ScoreTrainConfig,
    pub train_classifier: ClassifierTrainConfig,
    pub detect: DetectSection,
    pub tandem_baseline: BaselineKind,
    pub diag: DiagSection,
}

impl Default for RunConfig {
    /// The reference toy experiment: four in-distribution shape classes and
    /// two held-out ones at 16x16, sized to finish on a desktop CPU.
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            paths: PathsSection {
                dataset: "out/dataset.bin".into(),
                score_model: "out/score.bin".into(),
                classifier_model: "out/classifier.bin".into(),
                out_dir: "out".into(),
            },
            data: DatasetSpec {
                train_per_class: 90,
                val_per_class: 12,
                test_per_class: 20,
                ..DatasetSpec::default()
            },
            schedule: ScheduleSection {
                t_max: 100,
                kind: ScheduleKind::Linear,
            },
            train_score: ScoreTrainConfig {
                epochs: 14,
                batch_size: 16,
                lr: 2e-3,
                p_uncond: 0.1,
            },
            train_classifier: ClassifierTrainConfig {
                epochs: 40,
                batch_size: 8,
                lr: 5e-3,
            },
            detect: DetectSection {
                mode: GuidanceMode::Classifier,
                scale: 6.0,
                sign: GradSign::default(),
                cutouts: 4,
                hole_side: 4,
                fill: FillSpec::Auto,
                chain: ChainMode::ScaledIdentity,
                grad_input: GradInput::Xhat0,
                omega: 2.0,
                cam_cutpoint: 0.2,
                eta: 0.0,
                tau_len: 50,
                early_stop: true,
                stop_t_max: None,
                psnr_stop: ThresholdSpec::Auto,
                fsd_stop: ThresholdSpec::Off,
                stop_combine: StopCombine::Any,
                metric: Metric::LogitsL1,
                label_source: LabelSource::Classifier,
                dump_images: false,
            },
            tandem_baseline: BaselineKind::Ebo,
            diag: DiagSection {
                timesteps: (0..=10).map(|i| i * 10).collect(),
                curve_samples: 8,
                cutpoints: vec![0.0, 0.2, 0.6],
                tau_lens: vec![5, 10, 25, 50],
                aes_multipliers: vec![0.8, 0.9, 1.0, 1.1, 1.2],
            },
        }
    }
}

fn bad(key: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {detail}"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, format!("invalid integer '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, format!("invalid integer '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| bad(key, format!("invalid number '{v}'")))?;
    if !x.is_finite() {
        return Err(bad(key, format!("non-finite number '{v}'")));
    }
    Ok(x)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got '{v}'"))),
    }
}

fn parse_opt_usize(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "none" {
        Ok(None)
    } else {
        parse_usize(key, v).map(Some)
    }
}

fn parse_fill(key: &str, v: &str) -> Result<FillSpec> {
    if v == "auto" {
        Ok(FillSpec::Auto)
    } else {
        parse_f64(key, v).map(FillSpec::Value)
    }
}

fn parse_threshold(key: &str, v: &str) -> Result<ThresholdSpec> {
    match v {
        "none" => Ok(ThresholdSpec::Off),
        "auto" => Ok(ThresholdSpec::Auto),
        _ => parse_f64(key, v).map(ThresholdSpec::Fixed),
    }
}

fn parse_shapes(key: &str, v: &str) -> Result<Vec<ShapeClass>> {
    v.split(',')
        .map(|s| ShapeClass::parse(s.trim()).map_err(|e| bad(key, e)))
        .collect()
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_usize(key, s.trim())).collect()
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_f64(key, s.trim())).collect()
}

fn shapes_string(classes: &[ShapeClass]) -> String {
    classes
        .iter()
        .map(|c| c.name())
        .collect::<Vec<_>>()
        .join(",")
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl FillSpec {
    fn text(&self) -> String {
        match self {
            FillSpec::Auto => "auto".into(),
            FillSpec::Value(v) => v.to_string(),
        }
    }
}

impl ThresholdSpec {
    fn text(&self) -> String {
        match self {
            ThresholdSpec::Off => "none".into(),
            ThresholdSpec::Auto => "auto".into(),
            ThresholdSpec::Fixed(v) => v.to_string(),
        }
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment. Error messages name the key
    /// and the offending value but not the source line; callers add that.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key;
        let v = value;
        match k {
            "run.seed" => self.seed = parse_u64(k, v)?,
            "paths.dataset" => self.paths.dataset = v.into(),
            "paths.score_model" => self.paths.score_model = v.into(),
            "paths.classifier_model" => self.paths.classifier_model = v.into(),
            "paths.out_dir" => self.paths.out_dir = v.into(),
            "data.image_side" => self.data.image_side = parse_usize(k, v)?,
            "data.channels" => self.data.channels = parse_usize(k, v)?,
            "data.ind_classes" => self.data.ind_classes = parse_shapes(k, v)?,
            "data.ood_classes" => self.data.ood_classes = parse_shapes(k, v)?,
            "data.train_per_class" => self.data.train_per_class = parse_usize(k, v)?,
            "data.val_per_class" => self.data.val_per_class = parse_usize(k, v)?,
            "data.test_per_class" => self.data.test_per_class = parse_usize(k, v)?,
            "data.jitter.max_offset" => self.data.jitter.max_offset = parse_f64(k, v)?,
            "data.jitter.scale_min" => self.data.jitter.scale.0 = parse_f64(k, v)?,
            "data.jitter.scale_max" => self.data.jitter.scale.1 = parse_f64(k, v)?,
            "data.jitter.fg_min" => self.data.jitter.fg.0 = parse_f64(k, v)?,
            "data.jitter.fg_max" => self.data.jitter.fg.1 = parse_f64(k, v)?,
            "data.jitter.bg_min" => self.data.jitter.bg.0 = parse_f64(k, v)?,
            "data.jitter.bg_max" => self.data.jitter.bg.1 = parse_f64(k, v)?,
            "schedule.t_max" => self.schedule.t_max = parse_usize(k, v)?,
            "schedule.kind" => self.schedule.kind = ScheduleKind::parse(v).map_err(|e| bad(k, e))?,
            "train.score.epochs" => self.train_score.epochs = parse_usize(k, v)?,
            "train.score.batch_size" => self.train_score.batch_size = parse_usize(k, v)?,
            "train.score.lr" => self.train_score.lr = parse_f64(k, v)?,
            "train.score.p_uncond" => self.train_score.p_uncond = parse_f64(k, v)?,
            "train.classifier.epochs" => self.train_classifier.epochs = parse_usize(k, v)?,
            "train.classifier.batch_size" => self.train_classifier.batch_size = parse_usize(k, v)?,
            "train.classifier.lr" => self.train_classifier.lr = parse_f64(k, v)?,
            "detect.guidance.mode" => self.detect.mode = GuidanceMode::parse(v).map_err(|e| bad(k, e))?,
            "detect.guidance.scale" => self.detect.scale = parse_f64(k, v)?,
            "detect.guidance.sign" => self.detect.sign = GradSign::parse(v).map_err(|e| bad(k, e))?,
            "detect.guidance.cutouts" => self.detect.cutouts = parse_usize(k, v)?,
            "detect.guidance.hole_side" => self.detect.hole_side = parse_usize(k, v)?,
            "detect.guidance.fill" => self.detect.fill = parse_fill(k, v)?,
            "detect.guidance.chain" => self.detect.chain = ChainMode::parse(v).map_err(|e| bad(k, e))?,
            "detect.guidance.grad_input" => {
                self.detect.grad_input = GradInput::parse(v).map_err(|e| bad(k, e))?
            }
            "detect.guidance.omega" => self.detect.omega = parse_f64(k, v)?,
            "detect.guidance.cam_cutpoint" => self.detect.cam_cutpoint = parse_f64(k, v)?,
            "detect.eta" => self.detect.eta = parse_f64(k, v)?,
            "detect.tau_len" => self.detect.tau_len = parse_usize(k, v)?,
            "detect.early_stop.enabled" => self.detect.early_stop = parse_bool(k, v)?,
            "detect.early_stop.t_max" => self.detect.stop_t_max = parse_opt_usize(k, v)?,
            "detect.early_stop.psnr_threshold" => self.detect.psnr_stop = parse_threshold(k, v)?,
            "detect.early_stop.fsd_threshold" => self.detect.fsd_stop = parse_threshold(k, v)?,
            "detect.early_stop.combine" => {
                self.detect.stop_combine = StopCombine::parse(v).map_err(|e| bad(k, e))?
            }
            "detect.metric" => self.detect.metric = Metric::parse(v).map_err(|e| bad(k, e))?,
            "detect.label_source" => {
                self.detect.label_source = LabelSource::parse(v).map_err(|e| bad(k, e))?
            }
            "detect.dump_images" => self.detect.dump_images = parse_bool(k, v)?,
            "tandem.baseline" => {
                self.tandem_baseline = BaselineKind::parse(v).map_err(|e| bad(k, e))?
            }
            "diag.timesteps" => self.diag.timesteps = parse_usize_list(k, v)?,
            "diag.curve_samples" => self.diag.curve_samples = parse_usize(k, v)?,
            "diag.cutpoints" => self.diag.cutpoints = parse_f64_list(k, v)?,
            "diag.tau_lens" => self.diag.tau_lens = parse_usize_list(k, v)?,
            "diag.aes_multipliers" => self.diag.aes_multipliers = parse_f64_list(k, v)?,
            _ => return Err(CliError::Config(format!("unknown key '{k}'"))),
        }
        Ok(())
    }

    /// Emits every key in canonical order. The output parses back to an
    /// equal configuration.
    pub fn serialize(&self) -> String {
        let mut out = String::from("# resynth run configuration\n");
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("run.seed", self.seed.to_string());
        line("paths.dataset", self.paths.dataset.display().to_string());
        line(
            "paths.score_model",
            self.paths.score_model.display().to_string(),
        );
        line(
            "paths.classifier_model",
            self.paths.classifier_model.display().to_string(),
        );
        line("paths.out_dir", self.paths.out_dir.display().to_string());
        line("data.image_side", self.data.image_side.to_string());
        line("data.channels", self.data.channels.to_string());
        line("data.ind_classes", shapes_string(&self.data.ind_classes));
        line("data.ood_classes", shapes_string(&self.data.ood_classes));
        line(
            "data.train_per_class",
            self.data.train_per_class.to_string(),
        );
        line("data.val_per_class", self.data.val_per_class.to_string());
        line("data.test_per_class", self.data.test_per_class.to_string());
        line(
            "data.jitter.max_offset",
            self.data.jitter.max_offset.to_string(),
        );
        line("data.jitter.scale_min", self.data.jitter.scale.0.to_string());
        line("data.jitter.scale_max", self.data.jitter.scale.1.to_string());
        line("data.jitter.fg_min", self.data.jitter.fg.0.to_string());
        line("data.jitter.fg_max", self.data.jitter.fg.1.to_string());
        line("data.jitter.bg_min", self.data.jitter.bg.0.to_string());
        line("data.jitter.bg_max", self.data.jitter.bg.1.to_string());
        line("schedule.t_max", self.schedule.t_max.to_string());
        line("schedule.kind", self.schedule.kind.name().to_string());
        line("train.score.epochs", self.train_score.epochs.to_string());
        line(
            "train.score.batch_size",
            self.train_score.batch_size.to_string(),
        );
        line("train.score.lr", self.train_score.lr.to_string());
        line("train.score.p_uncond", self.train_score.p_uncond.to_string());
        line(
            "train.classifier.epochs",
            self.train_classifier.epochs.to_string(),
        );
        line(
            "train.classifier.batch_size",
            self.train_classifier.batch_size.to_string(),
        );
        line("train.classifier.lr", self.train_classifier.lr.to_string());
        line("detect.guidance.mode", self.detect.mode.name().to_string());
        line("detect.guidance.scale", self.detect.scale.to_string());
        line("detect.guidance.sign", self.detect.sign.name().to_string());
        line("detect.guidance.cutouts", self.detect.cutouts.to_string());
        line("detect.guidance.hole_side", self.detect.hole_side.to_string());
        line("detect.guidance.fill", self.detect.fill.text());
        line("detect.guidance.chain", self.detect.chain.name().to_string());
        line(
            "detect.guidance.grad_input",
            self.detect.grad_input.name().to_string(),
        );
        line("detect.guidance.omega", self.detect.omega.to_string());
        line(
            "detect.guidance.cam_cutpoint",
            self.detect.cam_cutpoint.to_string(),
        );
        line("detect.eta", self.detect.eta.to_string());
        line("detect.tau_len", self.detect.tau_len.to_string());
        line(
            "detect.early_stop.enabled",
            self.detect.early_stop.to_string(),
        );
        line(
            "detect.early_stop.t_max",
            match self.detect.stop_t_max {
                None => "none".into(),
                Some(t) => t.to_string(),
            },
        );
        line("detect.early_stop.psnr_threshold", self.detect.psnr_stop.text());
        line("detect.early_stop.fsd_threshold", self.detect.fsd_stop.text());
        line(
            "detect.early_stop.combine",
            self.detect.stop_combine.name().to_string(),
        );
        line("detect.metric", self.detect.metric.name().to_string());
        line(
            "detect.label_source",
            self.detect.label_source.name().to_string(),
        );
        line("detect.dump_images", self.detect.dump_images.to_string());
        line("tandem.baseline", self.tandem_baseline.name().to_string());
        line("diag.timesteps", join(&self.diag.timesteps));
        line("diag.curve_samples", self.diag.curve_samples.to_string());
        line("diag.cutpoints", join(&self.diag.cutpoints));
        line("diag.tau_lens", join(&self.diag.tau_lens));
        line("diag.aes_multipliers", join(&self.diag.aes_multipliers));
        out
    }

    /// Parses config text. Unknown keys, bad values, duplicates, and lines
    /// without `=` all error with their line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {lineno}: expected 'key = value', got '{line}'"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!(
                    "line {lineno}: duplicate key '{key}'"
                )));
            }
            cfg.set(key, value)
                .map_err(|e| match e {
                    CliError::Config(msg) => CliError::Config(format!("line {lineno}: {msg}")),
                    other => other,
                })?;
        }
        Ok(cfg)
    }

    /// Applies `--set key=value` overrides on top of a parsed config.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let Some((key, value)) = s.split_once('=') else {
                return Err(CliError::Config(format!(
                    "--set '{s}': expected key=value"
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    CliError::Config(msg) => CliError::Config(format!("--set: {msg}")),
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Cheap structural checks shared by every command; deeper validation
    /// happens in the core configs this lowers into.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train_score.validate()?;
        self.train_classifier.validate()?;
        if self.schedule.t_max < 2 {
            return Err(CliError::Config(format!(
                "schedule.t_max: must be at least 2, got {}",
                self.schedule.t_max
            )));
        }
        if self.detect.tau_len == 0 || self.detect.tau_len > self.schedule.t_max {
            return Err(CliError::Config(format!(
                "detect.tau_len: must lie in 1..={}, got {}",
                self.schedule.t_max, self.detect.tau_len
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialized_defaults_parse_back_exactly() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn nondefault_values_survive_the_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.data.ood_classes = vec![ShapeClass::Star];
        cfg.schedule.kind = ScheduleKind::Cosine;
        cfg.detect.mode = GuidanceMode::ClassifierFree;
        cfg.detect.fill = FillSpec::Value(0.125);
        cfg.detect.psnr_stop = ThresholdSpec::Fixed(17.25);
        cfg.detect.stop_t_max = Some(42);
        cfg.detect.dump_images = true;
        cfg.diag.cutpoints = vec![0.1, 0.3];
        let parsed = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn parse_errors_name_the_line_and_field() {
        let err = RunConfig::parse("run.seed = 1\nbogus line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = RunConfig::parse("data.channels = many\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("data.channels"), "{msg}");

        let err = RunConfig::parse("no.such.key = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key 'no.such.key'"), "{err}");

        let err = RunConfig::parse("run.seed = 1\nrun.seed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate key 'run.seed'"), "{err}");
    }

    #[test]
    fn comments_blanks_and_partial_files_are_fine() {
        let text = "# comment\n\n  run.seed = 99\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.data, RunConfig::default().data);
    }

    #[test]
    fn overrides_apply_in_order_and_report_bad_syntax() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            "run.seed=5".into(),
            "detect.metric = psnr".into(),
            "run.seed=6".into(),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 6);
        assert_eq!(cfg.detect.metric, Metric::Psnr);

        let err = cfg.apply_overrides(&["oops".into()]).unwrap_err();
        assert!(err.to_string().contains("expected key=value"), "{err}");
        let err = cfg.apply_overrides(&["detect.metric=wat".into()]).unwrap_err();
        assert!(err.to_string().contains("--set"), "{err}");
    }

    #[test]
    fn threshold_and_fill_specs_parse_all_three_states() {
        let mut cfg = RunConfig::default();
        cfg.set("detect.early_stop.psnr_threshold", "none").unwrap();
        assert_eq!(cfg.detect.psnr_stop, ThresholdSpec::Off);
        cfg.set("detect.early_stop.psnr_threshold", "auto").unwrap();
        assert_eq!(cfg.detect.psnr_stop, ThresholdSpec::Auto);
        cfg.set("detect.early_stop.psnr_threshold", "21.5").unwrap();
        assert_eq!(cfg.detect.psnr_stop, ThresholdSpec::Fixed(21.5));
        assert!(cfg.set("detect.early_stop.psnr_threshold", "soon").is_err());

        cfg.set("detect.guidance.fill", "auto").unwrap();
        assert_eq!(cfg.detect.fill, FillSpec::Auto);
        cfg.set("detect.guidance.fill", "0.5").unwrap();
        assert_eq!(cfg.detect.fill, FillSpec::Value(0.5));
    }

    #[test]
    fn validation_rejects_inconsistent_sections() {
        let mut cfg = RunConfig::default();
        cfg.detect.tau_len = 101;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.schedule.t_max = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.data.ind_classes.clear();
        assert!(cfg.validate().is_err());
    }
}
