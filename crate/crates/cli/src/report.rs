//! CSV report writing and reading. All files use a header row, comma
//! separators, no quoting (values never contain commas), and Rust's
//! shortest round-trip float formatting, so reruns are byte-identical and
//! parsing back loses nothing.

use std::path::Path;

use resynth_core::detect::DetectionRecord;
use resynth_core::eval::EvalReport;
use resynth_core::synth::Distribution;

use crate::bytes::write_atomic;
use crate::error::{CliError, Result};

/// Tiny comma-separated table builder.
pub struct CsvBuilder {
    text: String,
    columns: usize,
}

impl CsvBuilder {
    pub fn new(header: &[&str]) -> Self {
        CsvBuilder {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width mismatch");
        for cell in cells {
            assert!(
                !cell.contains(',') && !cell.contains('\n'),
                "cell needs quoting: {cell:?}"
            );
        }
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One parsed detection CSV row; the in-memory mirror of what
/// [`write_detection_csv`] emits.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub id: u64,
    pub truth: Distribution,
    pub label: usize,
    pub t_stop: usize,
    pub psnr: f64,
    pub l2: f64,
    pub logits_l1: Option<f64>,
    pub fsd: Option<f64>,
    pub mls: Option<f64>,
    pub ebo: Option<f64>,
    pub ood_score: f64,
}

pub const DETECTION_HEADER: [&str; 11] = [
    "id",
    "truth",
    "label",
    "t_stop",
    "psnr",
    "l2",
    "logits_l1",
    "fsd",
    "mls",
    "ebo",
    "ood_score",
];

pub fn detection_csv_text(records: &[DetectionRecord]) -> String {
    let mut csv = CsvBuilder::new(&DETECTION_HEADER);
    for r in records {
        csv.row(&[
            r.id.to_string(),
            r.truth.name().to_string(),
            r.label.to_string(),
            r.t_stop.to_string(),
            r.psnr.to_string(),
            r.l2.to_string(),
            opt_cell(r.logits_l1),
            opt_cell(r.fsd),
            opt_cell(r.mls),
            opt_cell(r.ebo),
            r.ood_score.to_string(),
        ]);
    }
    csv.finish()
}

pub fn write_detection_csv(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    write_atomic(path, detection_csv_text(records).as_bytes())
}

fn row_err(path: &Path, lineno: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: line {lineno}: {msg}", path.display()))
}

fn parse_cell<T: std::str::FromStr>(
    path: &Path,
    lineno: usize,
    name: &str,
    cell: &str,
) -> Result<T> {
    cell.parse()
        .map_err(|_| row_err(path, lineno, format!("bad {name} value '{cell}'")))
}

fn parse_opt(path: &Path, lineno: usize, name: &str, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_cell(path, lineno, name, cell).map(Some)
    }
}

pub fn read_detection_csv(path: &Path) -> Result<Vec<DetectionRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(row_err(path, 1, "empty file"));
    };
    if header != DETECTION_HEADER.join(",") {
        return Err(row_err(path, 1, "not a detection CSV (wrong header)"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != DETECTION_HEADER.len() {
            return Err(row_err(
                path,
                lineno,
                format!("expected {} columns, got {}", DETECTION_HEADER.len(), cells.len()),
            ));
        }
        let truth = match cells[1] {
            "ind" => Distribution::InD,
            "ood" => Distribution::Ood,
            other => return Err(row_err(path, lineno, format!("bad truth value '{other}'"))),
        };
        rows.push(DetectionRow {
            id: parse_cell(path, lineno, "id", cells[0])?,
            truth,
            label: parse_cell(path, lineno, "label", cells[2])?,
            t_stop: parse_cell(path, lineno, "t_stop", cells[3])?,
            psnr: parse_cell(path, lineno, "psnr", cells[4])?,
            l2: parse_cell(path, lineno, "l2", cells[5])?,
            logits_l1: parse_opt(path, lineno, "logits_l1", cells[6])?,
            fsd: parse_opt(path, lineno, "fsd", cells[7])?,
            mls: parse_opt(path, lineno, "mls", cells[8])?,
            ebo: parse_opt(path, lineno, "ebo", cells[9])?,
            ood_score: parse_cell(path, lineno, "ood_score", cells[10])?,
        });
    }
    Ok(rows)
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut csv = CsvBuilder::new(&["step", "loss"]);
    for (i, loss) in losses.iter().enumerate() {
        csv.row(&[i.to_string(), loss.to_string()]);
    }
    write_atomic(path, csv.finish().as_bytes())
}

/// One named row of an evaluation report (the detector itself, a logit
/// baseline, or the tandem combination).
pub fn eval_csv_text(rows: &[(String, EvalReport)]) -> String {
    let mut csv = CsvBuilder::new(&[
        "score",
        "auroc",
        "fpr_at_95",
        "threshold_at_95",
        "n_ind",
        "n_ood",
    ]);
    for (name, r) in rows {
        csv.row(&[
            name.clone(),
            r.auroc.to_string(),
            r.fpr_at_95.to_string(),
            r.threshold_at_95.to_string(),
            r.n_ind.to_string(),
            r.n_ood.to_string(),
        ]);
    }
    csv.finish()
}

pub fn eval_summary_text(source: &Path, rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("evaluation of {}\n", source.display()));
    out.push_str(
        "scores are oriented so larger means more out-of-distribution; the\n\
         in-distribution set is the accepted (positive) class, and FPR@95 uses\n\
         the loosest threshold accepting 95% of it.\n\n",
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{name:<10} auroc {:.4}  fpr@95 {:.4}  threshold {:.6}  ({} ind / {} ood)\n",
            r.auroc, r.fpr_at_95, r.threshold_at_95, r.n_ind, r.n_ood
        ));
    }
    out
}

/// Reads an eval CSV back into named reports.
pub fn read_eval_csv(path: &Path) -> Result<Vec<(String, EvalReport)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(row_err(path, lineno, "expected 6 columns"));
        }
        rows.push((
            cells[0].to_string(),
            EvalReport {
                auroc: parse_cell(path, lineno, "auroc", cells[1])?,
                fpr_at_95: parse_cell(path, lineno, "fpr_at_95", cells[2])?,
                threshold_at_95: parse_cell(path, lineno, "threshold_at_95", cells[3])?,
                n_ind: parse_cell(path, lineno, "n_ind", cells[4])?,
                n_ood: parse_cell(path, lineno, "n_ood", cells[5])?,
            },
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<DetectionRow> {
        vec![
            DetectionRow {
                id: 0,
                truth: Distribution::InD,
                label: 2,
                t_stop: 60,
                psnr: 31.5,
                l2: 0.125,
                logits_l1: Some(1.75),
                fsd: Some(0.0625),
                mls: Some(9.5),
                ebo: Some(-10.25),
                ood_score: 1.75,
            },
            DetectionRow {
                id: 1,
                truth: Distribution::Ood,
                label: 0,
                t_stop: 40,
                psnr: 18.25,
                l2: 0.5,
                logits_l1: None,
                fsd: None,
                mls: None,
                ebo: None,
                ood_score: 4.5,
            },
        ]
    }

    fn csv_from(rows: &[DetectionRow]) -> String {
        let mut csv = CsvBuilder::new(&DETECTION_HEADER);
        for r in rows {
            csv.row(&[
                r.id.to_string(),
                r.truth.name().to_string(),
                r.label.to_string(),
                r.t_stop.to_string(),
                r.psnr.to_string(),
                r.l2.to_string(),
                opt_cell(r.logits_l1),
                opt_cell(r.fsd),
                opt_cell(r.mls),
                opt_cell(r.ebo),
                r.ood_score.to_string(),
            ]);
        }
        csv.finish()
    }

    #[test]
    fn detection_rows_round_trip_including_missing_cells() {
        let rows = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detect.csv");
        write_atomic(&path, csv_from(&rows).as_bytes()).unwrap();
        let parsed = read_detection_csv(&path).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn malformed_detection_csvs_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detect.csv");

        write_atomic(&path, b"id,nope\n").unwrap();
        let err = read_detection_csv(&path).unwrap_err();
        assert!(err.to_string().contains("wrong header"), "{err}");

        let good = csv_from(&sample_rows());
        let broken = format!("{good}9,ind,0,1,not_a_number,0,,,,,0\n");
        write_atomic(&path, broken.as_bytes()).unwrap();
        let err = read_detection_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") && msg.contains("psnr"), "{msg}");
    }

    #[test]
    fn eval_reports_round_trip() {
        let rows = vec![
            (
                "detector".to_string(),
                EvalReport {
                    auroc: 0.9375,
                    fpr_at_95: 0.125,
                    threshold_at_95: -1.5,
                    n_ind: 80,
                    n_ood: 40,
                },
            ),
            (
                "ebo".to_string(),
                EvalReport {
                    auroc: 0.5,
                    fpr_at_95: 0.95,
                    threshold_at_95: 3.0,
                    n_ind: 80,
                    n_ood: 40,
                },
            ),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        write_atomic(&path, eval_csv_text(&rows).as_bytes()).unwrap();
        assert_eq!(read_eval_csv(&path).unwrap(), rows);

        let summary = eval_summary_text(Path::new("detect.csv"), &rows);
        assert!(summary.contains("detector"));
        assert!(summary.contains("0.9375"));
        assert!(summary.contains("accepted (positive) class"));
    }
}
