//! The end-to-end detector: predict a label, invert the input through the
//! diffusion model, re-synthesize it conditioned on that label, and score
//! the dissimilarity between input and synthesis.
//!
//! An in-distribution image re-synthesizes into something close to itself
//! because its content agrees with the predicted label. An
//! out-of-distribution image is pulled toward the label's appearance and
//! drifts away from the input, so dissimilarity is the detection score.
//!
//! The module also carries the two logit-based baselines (max-logit and
//! energy) and [`tandem_combine`], which trusts a confident baseline outside
//! a calibrated band and falls back to the re-synthesis score inside it.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::diffusion::{invert_trajectory, sample_trajectory, NoisePredictor, SamplerConfig};
use crate::early_stop::{invert_monitored, EarlyStopConfig, EarlyStopTrace};
use crate::error::{Error, Result};
use crate::eval::quantile;
use crate::guidance::{
    cam_mask, cfg_eps, classifier_guided_eps, classifier_score_grad, masked_cfg_eps,
    GuidanceConfig, GuidanceMode,
};
use crate::image::Image;
use crate::nn::{argmax, Classifier, ScoreNetwork};
use crate::rng::RngStream;
use crate::schedule::{tau, NoiseSchedule};
use crate::similarity::{fsd, l2_distance, logits_l1, psnr, Metric};
use crate::synth::Distribution;
use crate::ClassId;

/// Where the conditioning label comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// Argmax of the protected classifier's logits.
    Classifier,
    /// Ground truth for in-distribution inputs; a seeded uniformly random
    /// in-distribution label for out-of-distribution inputs (which have no
    /// legal label). An upper bound for label quality.
    Oracle,
}

impl LabelSource {
    pub fn name(&self) -> &'static str {
        match self {
            LabelSource::Classifier => "classifier",
            LabelSource::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(LabelSource::Classifier),
            "oracle" => Ok(LabelSource::Oracle),
            other => Err(Error::config(alloc::format!(
                "unknown label source '{other}' (expected classifier or oracle)"
            ))),
        }
    }
}

/// The frozen models a detection run reads. The classifier is optional:
/// classifier-free guidance with oracle labels, a pixel metric, and no CAM
/// mask never touches it.
#[derive(Clone, Copy)]
pub struct DetectorModels<'a> {
    pub score: &'a ScoreNetwork,
    pub classifier: Option<&'a Classifier>,
}

/// Full configuration of a detection run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub guidance: GuidanceConfig,
    pub sampler: SamplerConfig,
    /// Number of trajectory points used for both inversion and synthesis.
    pub tau_len: usize,
    /// Early-stop policy for the inversion; `None` inverts over the whole
    /// trajectory.
    pub early_stop: Option<EarlyStopConfig>,
    /// Which similarity metric becomes the final detection score.
    pub metric: Metric,
    pub label_source: LabelSource,
}

impl DetectorConfig {
    /// Classifier-guidance path: gradient conditioning at the given scale,
    /// a 50-point trajectory, and early-stopped inversion.
    pub fn classifier_path(schedule: &NoiseSchedule, scale: f64) -> Self {
        DetectorConfig {
            guidance: GuidanceConfig::classifier(scale),
            sampler: SamplerConfig::default(),
            tau_len: 50,
            early_stop: Some(EarlyStopConfig::new(schedule)),
            metric: Metric::LogitsL1,
            label_source: LabelSource::Classifier,
        }
    }

    /// Classifier-free path: conditional/unconditional extrapolation at
    /// weight `omega`, masked to the CAM region above `cam_cutpoint`, over a
    /// 25-point trajectory with full-length inversion.
    pub fn classifier_free_path(omega: f64, cam_cutpoint: f64) -> Self {
        DetectorConfig {
            guidance: GuidanceConfig::classifier_free(omega, cam_cutpoint),
            sampler: SamplerConfig::default(),
            tau_len: 25,
            early_stop: None,
            metric: Metric::LogitsL1,
            label_source: LabelSource::Classifier,
        }
    }

    /// Checks internal consistency and that every part of the pipeline this
    /// configuration enables has the models it needs for images of the given
    /// spatial size.
    pub fn validate(
        &self,
        schedule: &NoiseSchedule,
        models: &DetectorModels,
        height: usize,
        width: usize,
    ) -> Result<()> {
        self.guidance.validate(height, width)?;
        tau(schedule, self.tau_len)?;
        if let Some(es) = &self.early_stop {
            es.validate(schedule, models.classifier.is_some())?;
        }
        if models.classifier.is_none() {
            let needed_by = if self.guidance.mode == GuidanceMode::Classifier {
                Some("classifier guidance")
            } else if self.guidance.mode == GuidanceMode::ClassifierFree
                && self.guidance.cam_cutpoint > 0.0
            {
                Some("the CAM guidance mask")
            } else if self.label_source == LabelSource::Classifier {
                Some("classifier label prediction")
            } else if matches!(self.metric, Metric::LogitsL1 | Metric::Fsd) {
                Some("the logit/feature similarity metric")
            } else {
                None
            };
            if let Some(what) = needed_by {
                return Err(Error::config(alloc::format!(
                    "{what} requires a classifier, but none was provided"
                )));
            }
        }
        Ok(())
    }
}

/// Picks the conditioning label for an input.
///
/// `truth_label` is the dataset's global label (out-of-distribution classes
/// sit at `n_ind_classes` and above); oracle mode requires it and maps
/// out-of-distribution inputs to a random in-distribution label drawn from
/// `rng`.
pub fn predict_label(
    classifier: Option<&Classifier>,
    x: &Image,
    source: LabelSource,
    truth_label: Option<ClassId>,
    n_ind_classes: usize,
    rng: &mut RngStream,
) -> Result<ClassId> {
    if n_ind_classes == 0 {
        return Err(Error::arg("predict_label needs at least one class"));
    }
    match source {
        LabelSource::Classifier => {
            let clf = classifier
                .ok_or_else(|| Error::arg("classifier label source without a classifier"))?;
            Ok(argmax(&clf.logits(x)?))
        }
        LabelSource::Oracle => {
            let label = truth_label
                .ok_or_else(|| Error::arg("oracle label source without ground-truth metadata"))?;
            if label < n_ind_classes {
                Ok(label)
            } else {
                Ok(rng.next_below(n_ind_classes as u64) as usize)
            }
        }
    }
}

/// Maximum logit. Higher means more in-distribution.
pub fn mls_from_logits(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::arg("mls needs at least one logit"));
    }
    Ok(logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

pub fn mls_score(classifier: &Classifier, x: &Image) -> Result<f64> {
    mls_from_logits(&classifier.logits(x)?)
}

pub const EBO_TEMPERATURE: f64 = 1.0;

/// Energy score `-temperature * log sum_c exp(logit_c / temperature)`.
/// Higher means more out-of-distribution.
pub fn ebo_from_logits(logits: &[f64], temperature: f64) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::arg("ebo needs at least one logit"));
    }
    if !(temperature > 0.0) {
        return Err(Error::arg(alloc::format!(
            "ebo temperature {temperature} must be positive"
        )));
    }
    let max = logits
        .iter()
        .map(|v| v / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v / temperature - max).exp()).sum();
    Ok(-temperature * (max + sum.ln()))
}

pub fn ebo_score(classifier: &Classifier, x: &Image, temperature: f64) -> Result<f64> {
    ebo_from_logits(&classifier.logits(x)?, temperature)
}

/// Which logit baseline the tandem rule consults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Mls,
    Ebo,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Mls => "mls",
            BaselineKind::Ebo => "ebo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mls" => Ok(BaselineKind::Mls),
            "ebo" => Ok(BaselineKind::Ebo),
            other => Err(Error::config(alloc::format!(
                "unknown baseline '{other}' (expected mls or ebo)"
            ))),
        }
    }

    /// The baseline as an out-of-distribution score (higher = more OOD):
    /// max-logit is negated, energy is used as-is.
    pub fn ood_score_from_logits(&self, logits: &[f64]) -> Result<f64> {
        match self {
            BaselineKind::Mls => Ok(-mls_from_logits(logits)?),
            BaselineKind::Ebo => ebo_from_logits(logits, EBO_TEMPERATURE),
        }
    }
}

/// Result of inverting an input and synthesizing it back down.
#[derive(Debug, Clone)]
pub struct Resynthesis {
    pub synthesis: Image,
    /// Timestep the inversion stopped at (the synthesis start).
    pub t_stop: usize,
    /// Early-stop trace, when an early-stop policy was active.
    pub trace: Option<EarlyStopTrace>,
}

/// Inverts `x0` along the trajectory (unguided, optionally early-stopped)
/// and synthesizes back from the stopping latent conditioned on `y`.
///
/// `rng` drives the cutout draws of the classifier-guidance path; the
/// classifier-free path never touches it.
pub fn resynthesize(
    cfg: &DetectorConfig,
    models: &DetectorModels,
    schedule: &NoiseSchedule,
    x0: &Image,
    y: ClassId,
    rng: &mut RngStream,
) -> Result<Resynthesis> {
    cfg.validate(schedule, models, x0.height(), x0.width())?;
    let tau_steps = tau(schedule, cfg.tau_len)?;

    let (latent, t_stop, trace) = match &cfg.early_stop {
        Some(es) => {
            let (latent, trace) = invert_monitored(
                x0,
                models.score,
                None,
                schedule,
                &tau_steps,
                &cfg.sampler,
                es,
                models.classifier,
            )?;
            (latent, trace.t_stop, Some(trace))
        }
        None => {
            let latent =
                invert_trajectory(x0, models.score, None, schedule, &tau_steps, &cfg.sampler)?;
            (latent, *tau_steps.last().unwrap(), None)
        }
    };

    let synthesis = match cfg.guidance.mode {
        GuidanceMode::Classifier => {
            let clf = models.classifier.unwrap();
            sample_trajectory(
                &latent,
                t_stop,
                schedule,
                &tau_steps,
                &cfg.sampler,
                |x, t| {
                    let eps = models.score.predict_noise(x, t, None)?;
                    let grad = classifier_score_grad(
                        clf,
                        Some((models.score, None)),
                        x,
                        &eps,
                        t,
                        y,
                        schedule,
                        &cfg.guidance.clean_grad,
                        rng,
                    )?;
                    classifier_guided_eps(
                        &eps,
                        &grad,
                        t,
                        schedule,
                        cfg.guidance.scale,
                        cfg.guidance.sign,
                    )
                },
                None,
            )?
        }
        GuidanceMode::ClassifierFree => {
            let mask = if cfg.guidance.cam_cutpoint > 0.0 {
                let cam = models.classifier.unwrap().grad_cam(x0, y)?;
                Some(cam_mask(&cam, cfg.guidance.cam_cutpoint)?)
            } else {
                None
            };
            sample_trajectory(
                &latent,
                t_stop,
                schedule,
                &tau_steps,
                &cfg.sampler,
                |x, t| {
                    let unc = models.score.predict_noise(x, t, None)?;
                    let cond = models.score.predict_noise(x, t, Some(y))?;
                    match &mask {
                        Some(m) => masked_cfg_eps(&unc, &cond, cfg.guidance.omega, m),
                        None => cfg_eps(&unc, &cond, cfg.guidance.omega),
                    }
                },
                None,
            )?
        }
    };

    Ok(Resynthesis {
        synthesis,
        t_stop,
        trace,
    })
}

/// One scored input: the full pipeline trace plus every similarity and
/// baseline score. Fields that need a classifier are `None` without one.
#[derive(Debug, Clone)]
pub struct DetectionRecord {
    pub id: u64,
    pub truth: Distribution,
    /// The conditioning label the synthesis used.
    pub label: ClassId,
    pub t_stop: usize,
    pub synthesis: Image,
    pub psnr: f64,
    pub l2: f64,
    pub logits_l1: Option<f64>,
    pub fsd: Option<f64>,
    pub mls: Option<f64>,
    pub ebo: Option<f64>,
    /// The configured metric, oriented so higher means more
    /// out-of-distribution.
    pub ood_score: f64,
}

impl DetectionRecord {
    /// Verdict at a threshold: `true` means rejected as out-of-distribution.
    pub fn verdict(&self, threshold: f64) -> bool {
        self.ood_score > threshold
    }
}

/// Runs the whole pipeline on one input and fills a [`DetectionRecord`].
///
/// `truth_label` is the dataset's global label; `root` is the run-level
/// stream, from which per-sample streams are split by `id` so records are
/// independent of scoring order.
pub fn score_sample(
    cfg: &DetectorConfig,
    models: &DetectorModels,
    schedule: &NoiseSchedule,
    id: u64,
    x: &Image,
    truth_label: ClassId,
    n_ind_classes: usize,
    root: &RngStream,
) -> Result<DetectionRecord> {
    let mut oracle_rng = root.split("oracle", id);
    let label = predict_label(
        models.classifier,
        x,
        cfg.label_source,
        Some(truth_label),
        n_ind_classes,
        &mut oracle_rng,
    )?;

    let mut cutout_rng = root.split("cutout", id);
    let resyn = resynthesize(cfg, models, schedule, x, label, &mut cutout_rng)?;

    let psnr_v = psnr(x, &resyn.synthesis)?;
    let l2_v = l2_distance(x, &resyn.synthesis)?;
    let (logits_l1_v, fsd_v, mls_v, ebo_v) = match models.classifier {
        Some(clf) => {
            let logits_in = clf.logits(x)?;
            let logits_syn = clf.logits(&resyn.synthesis)?;
            let mut stack_in = alloc::vec![x.clone()];
            stack_in.extend(clf.feature_stack(x)?);
            let mut stack_syn = alloc::vec![resyn.synthesis.clone()];
            stack_syn.extend(clf.feature_stack(&resyn.synthesis)?);
            (
                Some(logits_l1(&logits_in, &logits_syn)?),
                Some(fsd(&stack_in, &stack_syn)?),
                Some(mls_from_logits(&logits_in)?),
                Some(ebo_from_logits(&logits_in, EBO_TEMPERATURE)?),
            )
        }
        None => (None, None, None, None),
    };

    let metric_needs_classifier = || {
        Error::config(alloc::format!(
            "metric {} requires a classifier",
            cfg.metric.name()
        ))
    };
    let raw = match cfg.metric {
        Metric::Psnr => psnr_v,
        Metric::L2 => l2_v,
        Metric::LogitsL1 => logits_l1_v.ok_or_else(metric_needs_classifier)?,
        Metric::Fsd => fsd_v.ok_or_else(metric_needs_classifier)?,
    };

    Ok(DetectionRecord {
        id,
        truth: if truth_label < n_ind_classes {
            Distribution::InD
        } else {
            Distribution::Ood
        },
        label,
        t_stop: resyn.t_stop,
        synthesis: resyn.synthesis,
        psnr: psnr_v,
        l2: l2_v,
        logits_l1: logits_l1_v,
        fsd: fsd_v,
        mls: mls_v,
        ebo: ebo_v,
        ood_score: cfg.metric.ood_score(raw),
    })
}

/// Default quantiles for the tandem confidence band.
pub const TANDEM_BAND_QUANTILES: (f64, f64) = (0.05, 0.95);

/// Tandem fusion rule: trust the baseline outside its calibrated confidence
/// band, fall back to the re-synthesis detector inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TandemConfig {
    pub baseline: BaselineKind,
    /// `(low, high)` quantiles of the baseline's out-of-distribution score
    /// on in-distribution validation data. `None` until calibrated.
    pub band: Option<(f64, f64)>,
}

impl TandemConfig {
    pub fn new(baseline: BaselineKind) -> Self {
        TandemConfig {
            baseline,
            band: None,
        }
    }
}

/// Calibrates the confidence band from baseline scores (OOD orientation) on
/// in-distribution validation data.
pub fn calibrate_band(ind_val_scores: &[f64], low_q: f64, high_q: f64) -> Result<(f64, f64)> {
    if !(low_q < high_q) {
        return Err(Error::config(alloc::format!(
            "band quantiles ({low_q}, {high_q}) must be increasing"
        )));
    }
    let low = quantile(ind_val_scores, low_q)?;
    let high = quantile(ind_val_scores, high_q)?;
    if !(low < high) {
        return Err(Error::config(alloc::format!(
            "degenerate confidence band [{low}, {high}]; baseline scores have no spread"
        )));
    }
    Ok((low, high))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Combines a baseline score and a re-synthesis detector score (both in OOD
/// orientation) into one final score.
///
/// Below the band the sample is confidently in-distribution and the final
/// score lands in `(-2, -1)`; inside the band (inclusive) the detector
/// decides and the score lands in `(0, 1)`; above the band the sample is
/// confidently out-of-distribution and the score lands in `(2, 3)`. Each
/// regime maps its input monotonically, so ranking is preserved within
/// regimes and the regimes themselves are strictly ordered.
pub fn tandem_combine(
    baseline_ood: f64,
    detector_ood: f64,
    cfg: &TandemConfig,
) -> Result<f64> {
    let (low, high) = cfg
        .band
        .ok_or_else(|| Error::config("tandem band not calibrated"))?;
    if !(low < high) {
        return Err(Error::config(alloc::format!(
            "tandem band [{low}, {high}] must be increasing"
        )));
    }
    if !baseline_ood.is_finite() || !detector_ood.is_finite() {
        return Err(Error::arg("tandem_combine needs finite scores"));
    }
    if baseline_ood < low {
        Ok(-2.0 + sigmoid(baseline_ood))
    } else if baseline_ood > high {
        Ok(2.0 + sigmoid(baseline_ood))
    } else {
        Ok(sigmoid(detector_ood))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{ChainMode, GradSign};
    use crate::schedule::{make_schedule, ScheduleKind};
    use crate::synth::{generate_image, DatasetSpec, ShapeClass};

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed).split("detect_test", 0)
    }

    struct Setup {
        score: ScoreNetwork,
        classifier: Classifier,
        schedule: NoiseSchedule,
        image: Image,
    }

    fn setup() -> Setup {
        let r = rng(11);
        let score = ScoreNetwork::new(1, 2, &mut r.split("score", 0)).unwrap();
        let classifier = Classifier::new(1, 2, &mut r.split("cls", 0)).unwrap();
        let schedule = make_schedule(20, ScheduleKind::Linear).unwrap();
        let spec = DatasetSpec {
            image_side: 8,
            ..DatasetSpec::default()
        };
        let image = generate_image(&spec, ShapeClass::Disk, &mut r.split("img", 0));
        Setup {
            score,
            classifier,
            schedule,
            image,
        }
    }

    fn small_config(schedule: &NoiseSchedule) -> DetectorConfig {
        let mut cfg = DetectorConfig::classifier_free_path(2.0, 0.0);
        cfg.tau_len = 5;
        cfg.metric = Metric::Psnr;
        cfg.label_source = LabelSource::Oracle;
        let _ = schedule;
        cfg
    }

    #[test]
    fn oracle_labels_pass_through_ind_and_randomize_ood() {
        let s = setup();
        let mut r = rng(3);
        let y = predict_label(None, &s.image, LabelSource::Oracle, Some(1), 4, &mut r).unwrap();
        assert_eq!(y, 1);

        let mut r1 = rng(5);
        let mut r2 = rng(5);
        let a = predict_label(None, &s.image, LabelSource::Oracle, Some(6), 4, &mut r1).unwrap();
        let b = predict_label(None, &s.image, LabelSource::Oracle, Some(6), 4, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a < 4);

        assert!(predict_label(None, &s.image, LabelSource::Oracle, None, 4, &mut r1).is_err());
        assert!(
            predict_label(None, &s.image, LabelSource::Classifier, Some(0), 4, &mut r1).is_err()
        );
    }

    #[test]
    fn classifier_labels_are_the_logit_argmax() {
        let s = setup();
        let mut r = rng(7);
        let y = predict_label(
            Some(&s.classifier),
            &s.image,
            LabelSource::Classifier,
            None,
            2,
            &mut r,
        )
        .unwrap();
        assert_eq!(y, argmax(&s.classifier.logits(&s.image).unwrap()));
    }

    #[test]
    fn baseline_scores_match_their_formulas() {
        assert_eq!(mls_from_logits(&[2.0, -1.0, 0.5]).unwrap(), 2.0);
        assert_eq!(mls_from_logits(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((ebo_from_logits(&[0.0, 0.0], 1.0).unwrap() + core::f64::consts::LN_2).abs()
            < 1e-12);
        assert!((ebo_from_logits(&[1.7], 1.0).unwrap() + 1.7).abs() < 1e-12);

        let mut r = rng(13);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..5).map(|_| 3.0 * r.next_gaussian()).collect();
            let temp = 0.25 + 2.0 * r.next_uniform();
            let direct: f64 =
                -temp * logits.iter().map(|v| (v / temp).exp()).sum::<f64>().ln();
            let stable = ebo_from_logits(&logits, temp).unwrap();
            assert!((direct - stable).abs() < 1e-12);
        }

        assert!(ebo_from_logits(&[1.0], 0.0).is_err());
        assert!(ebo_from_logits(&[1.0], -1.0).is_err());
        assert!(mls_from_logits(&[]).is_err());

        let logits = [2.0, -1.0, 0.5];
        assert_eq!(
            BaselineKind::Mls.ood_score_from_logits(&logits).unwrap(),
            -2.0
        );
        assert_eq!(
            BaselineKind::Ebo.ood_score_from_logits(&logits).unwrap(),
            ebo_from_logits(&logits, 1.0).unwrap()
        );
    }

    #[test]
    fn zero_omega_synthesis_is_the_pure_reconstruction() {
        let s = setup();
        let mut cfg = small_config(&s.schedule);
        cfg.guidance.omega = 0.0;
        let models = DetectorModels {
            score: &s.score,
            classifier: None,
        };
        let mut r = rng(19);
        let resyn = resynthesize(&cfg, &models, &s.schedule, &s.image, 1, &mut r).unwrap();

        let tau_steps = tau(&s.schedule, cfg.tau_len).unwrap();
        let latent = invert_trajectory(
            &s.image,
            &s.score,
            None,
            &s.schedule,
            &tau_steps,
            &cfg.sampler,
        )
        .unwrap();
        let plain = sample_trajectory(
            &latent,
            *tau_steps.last().unwrap(),
            &s.schedule,
            &tau_steps,
            &cfg.sampler,
            |x, t| s.score.predict_noise(x, t, None),
            None,
        )
        .unwrap();
        assert_eq!(resyn.synthesis.as_slice(), plain.as_slice());
        assert_eq!(resyn.t_stop, *tau_steps.last().unwrap());
        assert!(resyn.trace.is_none());
    }

    #[test]
    fn classifier_path_runs_early_stopped_and_deterministic() {
        let s = setup();
        let mut cfg = DetectorConfig::classifier_path(&s.schedule, 1.5);
        cfg.tau_len = 5;
        cfg.metric = Metric::Psnr;
        cfg.label_source = LabelSource::Oracle;
        cfg.guidance.clean_grad.cutouts = 2;
        cfg.guidance.clean_grad.hole_side = 3;
        cfg.guidance.clean_grad.chain = ChainMode::ScaledIdentity;
        cfg.guidance.sign = GradSign::Subtract;
        let models = DetectorModels {
            score: &s.score,
            classifier: Some(&s.classifier),
        };
        let root = rng(23);
        let a = score_sample(&cfg, &models, &s.schedule, 4, &s.image, 0, 2, &root).unwrap();
        let b = score_sample(&cfg, &models, &s.schedule, 4, &s.image, 0, 2, &root).unwrap();
        assert_eq!(a.synthesis.as_slice(), b.synthesis.as_slice());
        assert_eq!(a.ood_score, b.ood_score);
        assert_eq!(a.t_stop, b.t_stop);

        let stop_cfg = cfg.early_stop.as_ref().unwrap();
        assert!(a.t_stop <= stop_cfg.t_max);
        assert_eq!(a.truth, Distribution::InD);
        assert_eq!(a.label, 0);
        assert!(a.mls.is_some() && a.ebo.is_some());
        assert!(a.logits_l1.is_some() && a.fsd.is_some());
        assert_eq!(a.ood_score, -a.psnr);
        assert!(a.verdict(a.ood_score - 1.0));
        assert!(!a.verdict(a.ood_score + 1.0));
    }

    #[test]
    fn records_carry_ood_truth_for_high_labels() {
        let s = setup();
        let cfg = small_config(&s.schedule);
        let models = DetectorModels {
            score: &s.score,
            classifier: None,
        };
        let root = rng(29);
        let rec = score_sample(&cfg, &models, &s.schedule, 9, &s.image, 3, 2, &root).unwrap();
        assert_eq!(rec.truth, Distribution::Ood);
        assert!(rec.label < 2);
        assert!(rec.logits_l1.is_none() && rec.fsd.is_none());
        assert!(rec.mls.is_none() && rec.ebo.is_none());
    }

    #[test]
    fn config_validation_catches_missing_classifier_uses() {
        let s = setup();
        let schedule = &s.schedule;
        let no_cls = DetectorModels {
            score: &s.score,
            classifier: None,
        };

        let mut cfg = DetectorConfig::classifier_path(schedule, 1.0);
        cfg.tau_len = 5;
        assert!(cfg.validate(schedule, &no_cls, 8, 8).is_err());

        let mut cfg = small_config(schedule);
        cfg.guidance.cam_cutpoint = 0.2;
        assert!(cfg.validate(schedule, &no_cls, 8, 8).is_err());

        let mut cfg = small_config(schedule);
        cfg.label_source = LabelSource::Classifier;
        assert!(cfg.validate(schedule, &no_cls, 8, 8).is_err());

        let mut cfg = small_config(schedule);
        cfg.metric = Metric::Fsd;
        assert!(cfg.validate(schedule, &no_cls, 8, 8).is_err());

        let mut cfg = small_config(schedule);
        cfg.guidance.omega = -1.0;
        assert!(cfg.validate(schedule, &no_cls, 8, 8).is_err());

        let cfg = small_config(schedule);
        assert!(cfg.validate(schedule, &no_cls, 8, 8).is_ok());
    }

    #[test]
    fn band_calibration_uses_quantiles_and_rejects_degenerate_spread() {
        let scores: Vec<f64> = (0..21).map(|v| v as f64).collect();
        let (low, high) =
            calibrate_band(&scores, TANDEM_BAND_QUANTILES.0, TANDEM_BAND_QUANTILES.1).unwrap();
        assert!((low - 1.0).abs() < 1e-12);
        assert!((high - 19.0).abs() < 1e-12);
        assert!(calibrate_band(&[5.0, 5.0, 5.0], 0.05, 0.95).is_err());
        assert!(calibrate_band(&scores, 0.95, 0.05).is_err());
    }

    #[test]
    fn tandem_nine_sample_ordering_is_exact() {
        let tcfg = TandemConfig {
            baseline: BaselineKind::Ebo,
            band: Some((-1.0, 1.0)),
        };
        // (name, baseline score, detector score); detector scores are chosen
        // so the in-band samples reorder relative to their baselines.
        let samples = [
            ("ind_a", -5.0, 9.0),
            ("ind_b", -4.0, 8.0),
            ("ind_c", -3.0, 7.0),
            ("band_low_det", -0.5, 1.0),
            ("band_high_det", 0.0, 3.0),
            ("band_mid_det", 0.5, 2.0),
            ("ood_a", 2.0, -9.0),
            ("ood_b", 3.0, -8.0),
            ("ood_c", 4.0, -7.0),
        ];
        let mut finals: Vec<(&str, f64)> = samples
            .iter()
            .map(|(name, b, d)| (*name, tandem_combine(*b, *d, &tcfg).unwrap()))
            .collect();
        finals.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let order: Vec<&str> = finals.iter().map(|(n, _)| *n).collect();
        assert_eq!(
            order,
            [
                "ind_a",
                "ind_b",
                "ind_c",
                "band_low_det",
                "band_mid_det",
                "band_high_det",
                "ood_a",
                "ood_b",
                "ood_c"
            ]
        );

        for (_, score) in &finals[0..3] {
            assert!((-2.0..-1.0).contains(score));
        }
        for (_, score) in &finals[3..6] {
            assert!((0.0..1.0).contains(score));
        }
        for (_, score) in &finals[6..9] {
            assert!((2.0..3.0).contains(score));
        }
    }

    #[test]
    fn tandem_band_edges_are_in_band_and_errors_are_config() {
        let tcfg = TandemConfig {
            baseline: BaselineKind::Mls,
            band: Some((-1.0, 1.0)),
        };
        // Exactly at either edge the detector decides.
        assert_eq!(
            tandem_combine(-1.0, 0.0, &tcfg).unwrap(),
            sigmoid(0.0)
        );
        assert_eq!(tandem_combine(1.0, 0.0, &tcfg).unwrap(), sigmoid(0.0));
        // A confident baseline ignores the detector score entirely.
        assert_eq!(
            tandem_combine(-3.0, 100.0, &tcfg).unwrap(),
            tandem_combine(-3.0, -100.0, &tcfg).unwrap()
        );

        assert!(tandem_combine(0.0, 0.0, &TandemConfig::new(BaselineKind::Mls)).is_err());
        let bad = TandemConfig {
            baseline: BaselineKind::Mls,
            band: Some((1.0, -1.0)),
        };
        assert!(tandem_combine(0.0, 0.0, &bad).is_err());
        assert!(tandem_combine(f64::NAN, 0.0, &tcfg).is_err());
    }
}
