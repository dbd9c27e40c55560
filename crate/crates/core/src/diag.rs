//! Diagnostics probing how classifier evidence survives the noising process.
//!
//! The central question for guidance quality is whether the classifier can
//! still read a noised image, either directly or through the one-step clean
//! estimate. [`accuracy_vs_timestep`] measures both, reusing one noise draw
//! per sample across every timestep so the curves are comparable point by
//! point.

use alloc::vec::Vec;

use crate::diffusion::{estimate_x0, forward_diffuse, NoisePredictor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Classifier;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::ClassId;

/// What the classifier sees at a noised timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagInput {
    /// The noised image itself.
    RawXt,
    /// The one-step clean estimate from the unconditional noise prediction.
    Xhat0,
}

impl DiagInput {
    pub fn name(&self) -> &'static str {
        match self {
            DiagInput::RawXt => "raw_xt",
            DiagInput::Xhat0 => "xhat0",
        }
    }
}

/// Classifier accuracy on `data` after noising each sample to every
/// timestep in `ts`, returned as `(t, accuracy)` pairs in input order.
///
/// Each sample's noise is drawn once from `root.split("noise", index)` and
/// reused at every timestep. `t = 0` leaves images untouched in both modes,
/// so that entry reproduces clean accuracy exactly.
pub fn accuracy_vs_timestep<N: NoisePredictor>(
    classifier: &Classifier,
    net: &N,
    data: &[(&Image, ClassId)],
    schedule: &NoiseSchedule,
    ts: &[usize],
    mode: DiagInput,
    root: &RngStream,
) -> Result<Vec<(usize, f64)>> {
    if data.is_empty() {
        return Err(Error::arg("accuracy diagnostic needs at least one sample"));
    }
    if ts.is_empty() {
        return Err(Error::arg("accuracy diagnostic needs at least one timestep"));
    }
    if let Some(&t) = ts.iter().find(|&&t| t > schedule.t_max()) {
        return Err(Error::arg(alloc::format!(
            "diagnostic timestep {t} beyond schedule end {}",
            schedule.t_max()
        )));
    }

    let noises: Vec<Image> = data
        .iter()
        .enumerate()
        .map(|(i, (x, _))| {
            let mut rng = root.split("noise", i as u64);
            x.noise_like(&mut rng)
        })
        .collect();

    let mut curve = Vec::with_capacity(ts.len());
    for &t in ts {
        let mut correct = 0usize;
        for ((x0, label), noise) in data.iter().zip(&noises) {
            let x_t = forward_diffuse(x0, t, schedule, noise)?;
            let seen = match mode {
                DiagInput::RawXt => x_t,
                DiagInput::Xhat0 => {
                    let eps = net.predict_noise(&x_t, t.max(1), None)?;
                    estimate_x0(&x_t, &eps, t, schedule)?
                }
            };
            if crate::nn::argmax(&classifier.logits(&seen)?) == *label {
                correct += 1;
            }
        }
        curve.push((t, correct as f64 / data.len() as f64));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ScoreNetwork;
    use crate::schedule::{make_schedule, ScheduleKind};
    use crate::synth::{generate_image, DatasetSpec, ShapeClass};

    fn tiny_setup() -> (Classifier, ScoreNetwork, Vec<(Image, ClassId)>, NoiseSchedule) {
        let rng = RngStream::new(404);
        let classifier = Classifier::new(1, 2, &mut rng.split("cls", 0)).unwrap();
        let net = ScoreNetwork::new(1, 2, &mut rng.split("score", 0)).unwrap();
        let spec = DatasetSpec::default();
        let data: Vec<(Image, ClassId)> = (0..6)
            .map(|i| {
                let class = if i % 2 == 0 { ShapeClass::Disk } else { ShapeClass::Square };
                let mut img_rng = rng.split("img", i);
                (generate_image(&spec, class, &mut img_rng), (i % 2) as ClassId)
            })
            .collect();
        let schedule = make_schedule(40, ScheduleKind::Linear).unwrap();
        (classifier, net, data, schedule)
    }

    fn borrow(data: &[(Image, ClassId)]) -> Vec<(&Image, ClassId)> {
        data.iter().map(|(img, y)| (img, *y)).collect()
    }

    #[test]
    fn t_zero_reproduces_clean_accuracy_in_both_modes() {
        let (classifier, net, data, schedule) = tiny_setup();
        let refs = borrow(&data);
        let clean = crate::nn::accuracy(&classifier, &refs).unwrap();
        let root = RngStream::new(9).split("diag", 0);
        for mode in [DiagInput::RawXt, DiagInput::Xhat0] {
            let curve =
                accuracy_vs_timestep(&classifier, &net, &refs, &schedule, &[0], mode, &root)
                    .unwrap();
            assert_eq!(curve, alloc::vec![(0, clean)]);
        }
    }

    #[test]
    fn noise_is_paired_across_timesteps_and_runs() {
        let (classifier, net, data, schedule) = tiny_setup();
        let refs = borrow(&data);
        let root = RngStream::new(9).split("diag", 0);
        let ts = [0, 10, 20, 40];
        let a = accuracy_vs_timestep(
            &classifier, &net, &refs, &schedule, &ts, DiagInput::RawXt, &root,
        )
        .unwrap();
        let b = accuracy_vs_timestep(
            &classifier, &net, &refs, &schedule, &ts, DiagInput::RawXt, &root,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), ts.len());
        for ((t, acc), want_t) in a.iter().zip(ts) {
            assert_eq!(*t, want_t);
            assert!((0.0..=1.0).contains(acc));
        }
    }

    #[test]
    fn argument_errors_cover_empty_and_out_of_range_inputs() {
        let (classifier, net, data, schedule) = tiny_setup();
        let refs = borrow(&data);
        let root = RngStream::new(9).split("diag", 0);
        let empty: [(&Image, ClassId); 0] = [];
        assert!(accuracy_vs_timestep(
            &classifier, &net, &empty, &schedule, &[1], DiagInput::RawXt, &root
        )
        .is_err());
        assert!(accuracy_vs_timestep(
            &classifier, &net, &refs, &schedule, &[], DiagInput::RawXt, &root
        )
        .is_err());
        assert!(accuracy_vs_timestep(
            &classifier, &net, &refs, &schedule, &[41], DiagInput::RawXt, &root
        )
        .is_err());
    }

    #[test]
    fn mode_names_round_trip_for_reporting() {
        assert_eq!(DiagInput::RawXt.name(), "raw_xt");
        assert_eq!(DiagInput::Xhat0.name(), "xhat0");
    }
}
