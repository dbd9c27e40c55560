//! Scratch harness for measuring reference-run quality and wall time.
//! Reuses artifacts in its output directory when they already exist, so
//! repeated invocations skip training.
//!
//! Usage: probe <out_dir> <section> [key=value ...]
//! Sections: roundtrip | x0 | acc | detect | cf | grid | cfgrid | curves |
//! ablation | cutpoint | all.

use std::path::PathBuf;
use std::time::Instant;

use resynth_cli::config::{DetectSection, RunConfig, ThresholdSpec};
use resynth_cli::diagnose::{cmd_diagnose, DiagKind};
use resynth_cli::driver::{
    cmd_gen_data, cmd_train_classifier, cmd_train_score, load_classifier_checked,
    load_dataset_checked, load_score_checked, resolve_detector, schedule_of,
};
use resynth_cli::manifest::Manifest;
use resynth_core::detect::{score_sample, DetectionRecord, DetectorModels, LabelSource};
use resynth_core::diffusion::{
    estimate_x0, forward_diffuse, invert_trajectory, sample_trajectory, NoisePredictor,
    SamplerConfig,
};
use resynth_core::eval::{evaluate, median};
use resynth_core::guidance::GuidanceMode;
use resynth_core::nn::accuracy;
use resynth_core::image::Image;
use resynth_core::schedule::tau;
use resynth_core::similarity::psnr;
use resynth_core::synth::{Dataset, Distribution, Split};
use resynth_core::RngStream;

fn main() {
    if let Err(e) = run() {
        eprintln!("probe error: {e}");
        std::process::exit(1);
    }
}

fn medians_by_truth(records: &[DetectionRecord]) -> (f64, f64) {
    let stops = |d: Distribution| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.truth == d)
            .map(|r| r.t_stop as f64)
            .collect()
    };
    (
        median(&stops(Distribution::InD)).unwrap(),
        median(&stops(Distribution::Ood)).unwrap(),
    )
}

fn auroc_of(records: &[DetectionRecord], f: &dyn Fn(&DetectionRecord) -> f64) -> f64 {
    let pick = |d: Distribution| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.truth == d)
            .map(|r| f(r))
            .collect()
    };
    evaluate(&pick(Distribution::InD), &pick(Distribution::Ood))
        .unwrap()
        .auroc
}

/// Subset of test images: every k-th per distribution, capped.
fn test_subset(ds: &Dataset, per_dist: usize) -> Vec<(usize, Distribution)> {
    let mut picked = Vec::new();
    for dist in [Distribution::InD, Distribution::Ood] {
        let ids: Vec<usize> = ds
            .images
            .iter()
            .enumerate()
            .filter(|(_, img)| img.split == Split::Test && img.dist == dist)
            .map(|(i, _)| i)
            .collect();
        let stride = (ids.len() / per_dist).max(1);
        picked.extend(ids.iter().step_by(stride).take(per_dist).map(|&i| (i, dist)));
    }
    picked
}

fn run() -> resynth_cli::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out: PathBuf = args
        .first()
        .cloned()
        .unwrap_or_else(|| "/tmp/probe".into())
        .into();
    let section = args.get(1).cloned().unwrap_or_else(|| "all".into());
    let overrides: Vec<String> = args.iter().skip(2).cloned().collect();
    let want = |s: &str| section == "all" || section == s;

    let mut cfg = RunConfig::default();
    cfg.paths.out_dir = out.clone();
    cfg.paths.dataset = out.join("dataset.bin");
    cfg.paths.score_model = out.join("score.bin");
    cfg.paths.classifier_model = out.join("classifier.bin");
    cfg.apply_overrides(&overrides)?;

    let t0 = Instant::now();
    if !cfg.paths.dataset.exists() {
        cmd_gen_data(&cfg)?;
    }
    if !cfg.paths.score_model.exists() {
        cmd_train_score(&cfg)?;
        println!("[{:.1?}] train-score done", t0.elapsed());
    }
    if !cfg.paths.classifier_model.exists() {
        cmd_train_classifier(&cfg)?;
        println!("[{:.1?}] train-classifier done", t0.elapsed());
    }

    let manifest = Manifest::load_or_new(&cfg.paths.out_dir)?;
    let ds = load_dataset_checked(&cfg, &manifest)?;
    let score = load_score_checked(&cfg, &manifest)?;
    let classifier = load_classifier_checked(&cfg, &manifest)?;
    let schedule = schedule_of(&cfg)?;
    let models = DetectorModels {
        score: &score,
        classifier: Some(&classifier),
    };

    let test_ind: Vec<_> = ds
        .images
        .iter()
        .filter(|i| i.split == Split::Test && i.dist == Distribution::InD)
        .map(|i| (&i.image, i.label))
        .collect();
    println!(
        "classifier: test acc {:.4} ({} InD test images)",
        accuracy(&classifier, &test_ind)?,
        test_ind.len()
    );
    let logit_mag = |imgs: &[(&resynth_core::Image, usize)]| -> f64 {
        let mut m = 0.0;
        for (img, _) in imgs {
            let l = classifier.logits(img).unwrap();
            let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m += max;
        }
        m / imgs.len() as f64
    };
    println!("mean max-logit on InD test: {:.3}", logit_mag(&test_ind));

    if want("roundtrip") {
        let probe_t = Instant::now();
        let steps = tau(&schedule, schedule.t_max())?;
        let sampler = SamplerConfig::default();
        let mut psnrs = Vec::new();
        for (img, _) in &test_ind {
            let latent = invert_trajectory(*img, &score, None, &schedule, &steps, &sampler)?;
            let recon = sample_trajectory(
                &latent,
                *steps.last().unwrap(),
                &schedule,
                &steps,
                &sampler,
                |x, t| score.predict_noise(x, t, None),
                None,
            )?;
            psnrs.push(psnr(img, &recon)?);
        }
        psnrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let frac30 = psnrs.iter().filter(|&&p| p >= 30.0).count() as f64 / psnrs.len() as f64;
        println!(
            "[{:.1?}] roundtrip tau=T: min {:.2} p10 {:.2} median {:.2} frac>=30dB {:.3} ({:.1?})",
            t0.elapsed(),
            psnrs[0],
            psnrs[psnrs.len() / 10],
            psnrs[psnrs.len() / 2],
            frac30,
            probe_t.elapsed(),
        );
    }

    if want("x0") {
        let root = RngStream::new(cfg.seed).split("x0probe", 0);
        for &t in &[20usize, 40, 50, 60, 80] {
            let mut vals = Vec::new();
            for (k, img) in ds
                .images
                .iter()
                .filter(|i| i.split == Split::Val && i.dist == Distribution::InD)
                .enumerate()
                .take(16)
            {
                let mut rng = root.split("n", k as u64).split("t", t as u64);
                let noise = img.image.noise_like(&mut rng);
                let x_t = forward_diffuse(&img.image, t, &schedule, &noise)?;
                let eps = score.predict_noise(&x_t, t, None)?;
                let xh = estimate_x0(&x_t, &eps, t, &schedule)?;
                vals.push(psnr(&img.image, &xh)?);
            }
            println!("x0hat psnr at t={t}: median {:.2}", median(&vals).unwrap());
        }
    }

    if want("x0dump") {
        let ramp: Vec<char> = " .:-=+*#%@".chars().collect();
        let show = |img: &Image, label: &str| {
            println!("-- {label}");
            for y in 0..img.height() {
                let mut line = String::new();
                for x in 0..img.width() {
                    let v = img.get(0, y, x).clamp(0.0, 1.0);
                    line.push(ramp[((v * 9.0).round() as usize).min(9)]);
                }
                println!("{line}");
            }
        };
        let root = RngStream::new(cfg.seed).split("x0probe", 0);
        for (k, img) in ds
            .images
            .iter()
            .filter(|i| i.split == Split::Val && i.dist == Distribution::InD)
            .enumerate()
            .take(2)
        {
            show(&img.image, &format!("clean (class {})", img.label));
            for &t in &[40usize, 50, 60] {
                let mut rng = root.split("n", k as u64).split("t", t as u64);
                let noise = img.image.noise_like(&mut rng);
                let x_t = forward_diffuse(&img.image, t, &schedule, &noise)?;
                let eps = score.predict_noise(&x_t, t, None)?;
                let xh = estimate_x0(&x_t, &eps, t, &schedule)?;
                show(&xh, &format!("x0hat t={t} psnr {:.1}", psnr(&img.image, &xh)?));
            }
        }
    }

    if want("acc") {
        let path = cmd_diagnose(&cfg, DiagKind::AccVsT)?;
        print!("{}", std::fs::read_to_string(&path).unwrap());
    }

    if want("curves") {
        let path = cmd_diagnose(&cfg, DiagKind::DegradationCurves)?;
        print!("{}", std::fs::read_to_string(&path).unwrap());
    }

    let subset_run = |detect: &DetectSection,
                      label: &str,
                      per_dist: usize|
     -> resynth_cli::Result<Vec<DetectionRecord>> {
        let probe_t = Instant::now();
        let (detector, notes) = resolve_detector(detect, &models, &schedule, &ds)?;
        let root = RngStream::new(cfg.seed).split("detect", 0);
        let picked = test_subset(&ds, per_dist);
        let mut records = Vec::new();
        for &(i, _) in &picked {
            let img = &ds.images[i];
            records.push(score_sample(
                &detector,
                &models,
                &schedule,
                i as u64,
                &img.image,
                img.label,
                ds.spec.ind_classes.len(),
                &root,
            )?);
        }
        let auroc = auroc_of(&records, &|r| r.ood_score);
        let (mi, mo) = medians_by_truth(&records);
        println!(
            "{label}: auroc {:.4} (n {}) t_stop med {}/{} notes {:?} ({:.1?})",
            auroc,
            records.len(),
            mi,
            mo,
            notes,
            probe_t.elapsed()
        );
        Ok(records)
    };

    if want("detect") {
        let records = subset_run(&cfg.detect, "cls-path/cls-labels", 40)?;
        println!(
            "  mls {:.4} ebo {:.4} | psnr-as-score {:.4} l2 {:.4} logits_l1 {:.4} fsd {:.4}",
            auroc_of(&records, &|r| -r.mls.unwrap()),
            auroc_of(&records, &|r| r.ebo.unwrap()),
            auroc_of(&records, &|r| -r.psnr),
            auroc_of(&records, &|r| r.l2),
            auroc_of(&records, &|r| r.logits_l1.unwrap()),
            auroc_of(&records, &|r| r.fsd.unwrap()),
        );
        let mut oracle = cfg.detect.clone();
        oracle.label_source = LabelSource::Oracle;
        subset_run(&oracle, "cls-path/oracle-labels", 40)?;
    }

    if want("grid") {
        for scale in [0.5, 2.0, 6.0, 15.0] {
            let mut d = cfg.detect.clone();
            d.scale = scale;
            let records = subset_run(&d, &format!("cls scale={scale}"), 15)?;
            println!(
                "  psnr {:.4} l2 {:.4} logits_l1 {:.4} fsd {:.4}",
                auroc_of(&records, &|r| -r.psnr),
                auroc_of(&records, &|r| r.l2),
                auroc_of(&records, &|r| r.logits_l1.unwrap()),
                auroc_of(&records, &|r| r.fsd.unwrap()),
            );
        }
        let mut no_stop = cfg.detect.clone();
        no_stop.early_stop = false;
        let records = subset_run(&no_stop, "cls full-inversion", 15)?;
        println!(
            "  psnr {:.4} l2 {:.4} logits_l1 {:.4} fsd {:.4}",
            auroc_of(&records, &|r| -r.psnr),
            auroc_of(&records, &|r| r.l2),
            auroc_of(&records, &|r| r.logits_l1.unwrap()),
            auroc_of(&records, &|r| r.fsd.unwrap()),
        );
    }

    if want("cf") {
        let mut cf = cfg.detect.clone();
        cf.mode = GuidanceMode::ClassifierFree;
        cf.tau_len = 25;
        cf.early_stop = false;
        let records = subset_run(&cf, "cf-path/cls-labels", 40)?;
        println!(
            "  psnr {:.4} l2 {:.4} logits_l1 {:.4} fsd {:.4}",
            auroc_of(&records, &|r| -r.psnr),
            auroc_of(&records, &|r| r.l2),
            auroc_of(&records, &|r| r.logits_l1.unwrap()),
            auroc_of(&records, &|r| r.fsd.unwrap()),
        );
        let mut cf_oracle = cf.clone();
        cf_oracle.label_source = LabelSource::Oracle;
        subset_run(&cf_oracle, "cf-path/oracle-labels", 40)?;
    }

    if want("cfgrid") {
        for omega in [1.0, 2.0, 4.0, 8.0] {
            for cut in [0.0, 0.2] {
                let mut d = cfg.detect.clone();
                d.mode = GuidanceMode::ClassifierFree;
                d.tau_len = 25;
                d.early_stop = false;
                d.omega = omega;
                d.cam_cutpoint = cut;
                let records =
                    subset_run(&d, &format!("cf omega={omega} cut={cut}"), 15)?;
                println!(
                    "  psnr {:.4} l2 {:.4} logits_l1 {:.4} fsd {:.4}",
                    auroc_of(&records, &|r| -r.psnr),
                    auroc_of(&records, &|r| r.l2),
                    auroc_of(&records, &|r| r.logits_l1.unwrap()),
                    auroc_of(&records, &|r| r.fsd.unwrap()),
                );
            }
        }
    }

    if want("ablation") {
        let path = cmd_diagnose(&cfg, DiagKind::CleangradAblation)?;
        print!("{}", std::fs::read_to_string(&path).unwrap());
    }

    if want("cutpoint") {
        let path = cmd_diagnose(&cfg, DiagKind::CutpointSweep)?;
        print!("{}", std::fs::read_to_string(&path).unwrap());
    }

    let _ = ThresholdSpec::Auto;
    println!("[{:.1?}] probe done", t0.elapsed());
    Ok(())
}
