//! Detection-quality metrics over scored in- and out-of-distribution sets.
//!
//! Scores are oriented so larger means more out-of-distribution (see
//! [`crate::similarity::Metric::ood_score`]). AUROC treats the
//! out-of-distribution set as the positive class and gives ties half credit;
//! FPR is reported at a fixed accept rate on the in-distribution set.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

fn check_scores(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::arg(alloc::format!("{name} score set is empty")));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(alloc::format!(
            "{name} scores contain a non-finite value"
        )));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Area under the ROC curve via the rank-sum statistic, with average ranks
/// for ties (each tie counts half).
pub fn auroc(ind_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("in-distribution", ind_scores)?;
    check_scores("out-of-distribution", ood_scores)?;
    let mut all: Vec<(f64, bool)> = ind_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut ood_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks are 1-based; every member of a tie group gets the average.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                ood_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let n_ood = ood_scores.len() as f64;
    let n_ind = ind_scores.len() as f64;
    Ok((ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_ind))
}

/// False-positive rate at an in-distribution accept rate of `tpr`, together
/// with the accept threshold that realizes it.
///
/// The threshold is the `ceil(tpr * n_ind)`-th smallest in-distribution
/// score, a sample is accepted when its score is at or below the threshold,
/// and the reported rate is the fraction of out-of-distribution samples
/// accepted.
pub fn fpr_at_tpr(ind_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<(f64, f64)> {
    check_scores("in-distribution", ind_scores)?;
    check_scores("out-of-distribution", ood_scores)?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::arg(alloc::format!(
            "target accept rate {tpr} outside (0, 1]"
        )));
    }
    let ind = sorted(ind_scores);
    let k = (tpr * ind.len() as f64).ceil() as usize;
    let threshold = ind[k.clamp(1, ind.len()) - 1];
    let accepted = ood_scores.iter().filter(|&&s| s <= threshold).count();
    Ok((accepted as f64 / ood_scores.len() as f64, threshold))
}

/// Linear-interpolation quantile (the `(n - 1) * q` convention).
pub fn quantile(xs: &[f64], q: f64) -> Result<f64> {
    check_scores("quantile", xs)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::arg(alloc::format!("quantile {q} outside [0, 1]")));
    }
    let v = sorted(xs);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= v.len() {
        return Ok(v[v.len() - 1]);
    }
    Ok(v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo]))
}

pub fn median(xs: &[f64]) -> Result<f64> {
    quantile(xs, 0.5)
}

/// The standard pair of detection metrics plus the threshold behind the
/// false-positive rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub fpr_at_95: f64,
    /// Accept threshold realizing the 95% in-distribution accept rate.
    pub threshold_at_95: f64,
    pub n_ind: usize,
    pub n_ood: usize,
}

pub fn evaluate(ind_scores: &[f64], ood_scores: &[f64]) -> Result<EvalReport> {
    let (fpr_at_95, threshold_at_95) = fpr_at_tpr(ind_scores, ood_scores, 0.95)?;
    Ok(EvalReport {
        auroc: auroc(ind_scores, ood_scores)?,
        fpr_at_95,
        threshold_at_95,
        n_ind: ind_scores.len(),
        n_ood: ood_scores.len(),
    })
}

/// One row of a parameter sweep: the swept value and the evaluation it
/// produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: EvalReport,
}

/// Evaluates `runner` at each value in turn. Rows are independent, so a
/// duplicated value yields an identical row.
pub fn sweep<F>(values: &[f64], mut runner: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64) -> Result<EvalReport>,
{
    if values.is_empty() {
        return Err(Error::arg("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&value| {
            Ok(SweepRow {
                value,
                report: runner(value)?,
            })
        })
        .collect()
}
