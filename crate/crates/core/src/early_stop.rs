//! Early stopping for the inversion stage.
//!
//! During inversion the clean estimate `x0_hat` drifts away from the input,
//! and the two distributions drift at different rates: in-distribution
//! images tend to cross a quality threshold in fewer steps (keeping their
//! reconstructions faithful), while mismatched ones run longer (giving the
//! label conditioning more room to act). This module truncates inversion at
//! a hard ceiling `t_max` and optionally stops earlier the moment the
//! monitored degradation metrics (PSNR, feature-space distance, or both)
//! cross their thresholds at a trajectory point. The stopping timestep is
//! returned alongside the latent and is itself a detection signal.

use alloc::vec::Vec;

use crate::diffusion::{invert_trajectory_with, NoisePredictor, SamplerConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::classifier::Classifier;
use crate::schedule::NoiseSchedule;
use crate::similarity::{fsd, psnr};
use crate::ClassId;

/// How multiple enabled stop conditions combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCombine {
    /// Stop when any enabled condition trips (the default).
    Any,
    /// Stop only when every enabled condition trips.
    All,
}

impl Default for StopCombine {
    fn default() -> Self {
        StopCombine::Any
    }
}

impl StopCombine {
    pub fn name(self) -> &'static str {
        match self {
            StopCombine::Any => "any",
            StopCombine::All => "all",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "any" => Ok(StopCombine::Any),
            "all" => Ok(StopCombine::All),
            other => Err(Error::config(alloc::format!(
                "unknown stop combiner '{other}' (expected any or all)"
            ))),
        }
    }
}

/// Early-stop policy for [`invert_monitored`].
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopConfig {
    /// Hard ceiling: inversion never proceeds past the last trajectory point
    /// at or below this timestep.
    pub t_max: usize,
    /// Stop once `psnr(x0_hat, x0)` falls below this value.
    pub psnr_threshold: Option<f64>,
    /// Stop once the feature-space distance exceeds this value. Needs a
    /// classifier for the feature maps.
    pub fsd_threshold: Option<f64>,
    pub combine: StopCombine,
}

/// Default ceiling: three fifths of the schedule length, rounded.
pub fn default_t_max(schedule_t_max: usize) -> usize {
    (3 * schedule_t_max + 2) / 5
}

impl EarlyStopConfig {
    pub fn new(schedule: &NoiseSchedule) -> Self {
        EarlyStopConfig {
            t_max: default_t_max(schedule.t_max()),
            psnr_threshold: None,
            fsd_threshold: None,
            combine: StopCombine::Any,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule, has_classifier: bool) -> Result<()> {
        if self.t_max == 0 || self.t_max > schedule.t_max() {
            return Err(Error::config(alloc::format!(
                "early-stop t_max {} outside 1..={}",
                self.t_max,
                schedule.t_max()
            )));
        }
        if self.fsd_threshold.is_some() && !has_classifier {
            return Err(Error::config(
                "feature-distance monitoring needs a classifier",
            ));
        }
        Ok(())
    }
}

/// One monitored trajectory point.
#[derive(Debug, Clone, PartialEq)]
pub struct StopRecord {
    pub t: usize,
    pub psnr: f64,
    pub fsd: Option<f64>,
    pub fired: bool,
}

/// Everything observed during a monitored inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopTrace {
    pub records: Vec<StopRecord>,
    /// Timestep of the returned latent.
    pub t_stop: usize,
    /// Whether any stop condition fired (as opposed to running into the
    /// ceiling).
    pub stopped_early: bool,
}

/// The trajectory points a monitored inversion will visit: the prefix of
/// `tau_steps` at or below `t_max`.
pub fn stop_points(tau_steps: &[usize], t_max: usize) -> Vec<usize> {
    tau_steps.iter().copied().filter(|&t| t <= t_max).collect()
}

/// Inverts `x0` along the trajectory, monitoring the degradation of the
/// clean estimate against `x0` at every visited point and stopping per
/// `stop_cfg`. Returns the latent, paired with a trace of every record.
pub fn invert_monitored<N>(
    x0: &Image,
    net: &N,
    y: Option<ClassId>,
    schedule: &NoiseSchedule,
    tau_steps: &[usize],
    cfg: &SamplerConfig,
    stop_cfg: &EarlyStopConfig,
    classifier: Option<&Classifier>,
) -> Result<(Image, EarlyStopTrace)>
where
    N: NoisePredictor + ?Sized,
{
    stop_cfg.validate(schedule, classifier.is_some())?;
    let truncated = stop_points(tau_steps, stop_cfg.t_max);
    if truncated.is_empty() {
        return Err(Error::config(alloc::format!(
            "no trajectory points at or below t_max {}",
            stop_cfg.t_max
        )));
    }

    let ref_stack: Option<Vec<Image>> = match (stop_cfg.fsd_threshold, classifier) {
        (Some(_), Some(cls)) => {
            let mut stack = alloc::vec![x0.clone()];
            stack.extend(cls.feature_stack(x0)?);
            Some(stack)
        }
        _ => None,
    };

    let mut records: Vec<StopRecord> = Vec::with_capacity(truncated.len());
    let monitor = |t: usize, _x_t: &Image, x0_est: &Image| -> Result<bool> {
        let p = psnr(x0_est, x0)?;
        let f = match (&ref_stack, classifier) {
            (Some(reference), Some(cls)) => {
                let mut stack = alloc::vec![x0_est.clone()];
                stack.extend(cls.feature_stack(x0_est)?);
                Some(fsd(&stack, reference)?)
            }
            _ => None,
        };
        let psnr_hit = stop_cfg.psnr_threshold.map(|thr| p < thr);
        let fsd_hit = stop_cfg.fsd_threshold.map(|thr| f.unwrap_or(0.0) > thr);
        let fired = match stop_cfg.combine {
            StopCombine::Any => psnr_hit.unwrap_or(false) || fsd_hit.unwrap_or(false),
            StopCombine::All => {
                let enabled = [psnr_hit, fsd_hit];
                enabled.iter().any(|h| h.is_some())
                    && enabled.iter().all(|h| h.unwrap_or(true))
            }
        };
        records.push(StopRecord {
            t,
            psnr: p,
            fsd: f,
            fired,
        });
        Ok(fired)
    };

    let (latent, t_stop) =
        invert_trajectory_with(x0, net, y, schedule, &truncated, cfg, monitor)?;
    let stopped_early = records.iter().any(|r| r.fired);
    Ok((
        latent,
        EarlyStopTrace {
            records,
            t_stop,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::invert_trajectory;
    use crate::nn::layers::Conv2d;
    use crate::nn::score::{ScoreNetwork, SCORE_WIDTH};
    use crate::rng::RngStream;
    use crate::schedule::{make_schedule, tau, ScheduleKind};

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed).split("early_stop_test", 0)
    }

    fn test_net(seed: u64) -> ScoreNetwork {
        let mut r = rng(seed);
        let mut net = ScoreNetwork::new(1, 2, &mut r).unwrap();
        net.conv_out = Conv2d::new(SCORE_WIDTH, 1, &mut r);
        net
    }

    fn test_image(seed: u64) -> Image {
        let mut r = rng(seed + 100);
        let mut img = Image::zeros(1, 8, 8);
        for v in img.as_mut_slice() {
            *v = 0.5 + 0.3 * r.next_gaussian();
        }
        img
    }

    #[test]
    fn default_ceiling_is_three_fifths_rounded() {
        assert_eq!(default_t_max(200), 120);
        assert_eq!(default_t_max(201), 121);
        assert_eq!(default_t_max(5), 3);
    }

    #[test]
    fn stop_points_truncate_at_the_ceiling() {
        let steps = [20, 40, 60, 80, 100, 120, 140];
        assert_eq!(stop_points(&steps, 120), vec![20, 40, 60, 80, 100, 120]);
        assert_eq!(stop_points(&steps, 119), vec![20, 40, 60, 80, 100]);
        assert_eq!(stop_points(&steps, 10), Vec::<usize>::new());
    }

    #[test]
    fn thresholdless_run_matches_plain_truncated_inversion() {
        let schedule = make_schedule(100, ScheduleKind::Linear).unwrap();
        let steps = tau(&schedule, 10).unwrap();
        let net = test_net(1);
        let x0 = test_image(1);
        let cfg = SamplerConfig::default();
        let stop_cfg = EarlyStopConfig {
            t_max: 60,
            psnr_threshold: None,
            fsd_threshold: None,
            combine: StopCombine::Any,
        };
        let (latent, trace) =
            invert_monitored(&x0, &net, Some(0), &schedule, &steps, &cfg, &stop_cfg, None)
                .unwrap();
        let truncated = stop_points(&steps, 60);
        let plain = invert_trajectory(&x0, &net, Some(0), &schedule, &truncated, &cfg).unwrap();
        assert_eq!(latent, plain);
        assert_eq!(trace.t_stop, *truncated.last().unwrap());
        assert!(!trace.stopped_early);
        assert_eq!(
            trace.records.iter().map(|r| r.t).collect::<Vec<_>>(),
            truncated
        );
        assert!(trace.records.iter().all(|r| r.fsd.is_none() && !r.fired));
    }

    #[test]
    fn impossible_psnr_threshold_stops_at_the_first_point() {
        let schedule = make_schedule(100, ScheduleKind::Linear).unwrap();
        let steps = tau(&schedule, 10).unwrap();
        let net = test_net(2);
        let x0 = test_image(2);
        let stop_cfg = EarlyStopConfig {
            t_max: 60,
            psnr_threshold: Some(99.5),
            fsd_threshold: None,
            combine: StopCombine::Any,
        };
        let (_, trace) = invert_monitored(
            &x0,
            &net,
            Some(0),
            &schedule,
            &steps,
            &SamplerConfig::default(),
            &stop_cfg,
            None,
        )
        .unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.t_stop, steps[0]);
        assert!(trace.stopped_early);
        assert!(trace.records[0].fired);
    }

    #[test]
    fn combine_all_needs_every_condition() {
        let schedule = make_schedule(100, ScheduleKind::Linear).unwrap();
        let steps = tau(&schedule, 10).unwrap();
        let net = test_net(3);
        let x0 = test_image(3);
        let classifier = Classifier::new(1, 2, &mut rng(9)).unwrap();
        // The feature-distance condition always trips, the PSNR condition
        // never does: Any stops immediately, All never stops.
        let base = EarlyStopConfig {
            t_max: 60,
            psnr_threshold: Some(-1e9),
            fsd_threshold: Some(-1.0),
            combine: StopCombine::Any,
        };
        let (_, any_trace) = invert_monitored(
            &x0,
            &net,
            Some(0),
            &schedule,
            &steps,
            &SamplerConfig::default(),
            &base,
            Some(&classifier),
        )
        .unwrap();
        assert_eq!(any_trace.t_stop, steps[0]);
        assert!(any_trace.records[0].fsd.is_some());

        let all_cfg = EarlyStopConfig {
            combine: StopCombine::All,
            ..base
        };
        let (_, all_trace) = invert_monitored(
            &x0,
            &net,
            Some(0),
            &schedule,
            &steps,
            &SamplerConfig::default(),
            &all_cfg,
            Some(&classifier),
        )
        .unwrap();
        assert!(!all_trace.stopped_early);
        assert_eq!(all_trace.t_stop, *stop_points(&steps, 60).last().unwrap());
    }

    #[test]
    fn config_errors_cover_missing_classifier_and_bad_ceiling() {
        let schedule = make_schedule(100, ScheduleKind::Linear).unwrap();
        let steps = tau(&schedule, 10).unwrap();
        let net = test_net(4);
        let x0 = test_image(4);
        let needs_cls = EarlyStopConfig {
            t_max: 60,
            psnr_threshold: None,
            fsd_threshold: Some(0.5),
            combine: StopCombine::Any,
        };
        let err = invert_monitored(
            &x0,
            &net,
            None,
            &schedule,
            &steps,
            &SamplerConfig::default(),
            &needs_cls,
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));

        let too_low = EarlyStopConfig {
            t_max: 5,
            psnr_threshold: None,
            fsd_threshold: None,
            combine: StopCombine::Any,
        };
        let err = invert_monitored(
            &x0,
            &net,
            None,
            &schedule,
            &steps,
            &SamplerConfig::default(),
            &too_low,
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));

        let past_end = EarlyStopConfig {
            t_max: 101,
            psnr_threshold: None,
            fsd_threshold: None,
            combine: StopCombine::Any,
        };
        let err = invert_monitored(
            &x0,
            &net,
            None,
            &schedule,
            &steps,
            &SamplerConfig::default(),
            &past_end,
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
