//! Synthesis image dumps as binary PGM (one channel) or PPM (three
//! channels) files plus a sidecar index CSV. The formats are plain
//! byte-grid containers every image viewer and converter understands, so
//! the pipeline needs no codec dependency; see the README for a one-line
//! conversion to PNG.

use std::path::{Path, PathBuf};

use resynth_core::detect::DetectionRecord;
use resynth_core::Image;

use crate::bytes::write_atomic;
use crate::error::{CliError, Result};
use crate::report::CsvBuilder;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes intensities in [0, 1] row-major; values outside the range clamp.
pub fn encode_portable(img: &Image) -> Result<Vec<u8>> {
    let (c, h, w) = img.shape();
    let mut out = match c {
        1 => format!("P5\n{w} {h}\n255\n").into_bytes(),
        3 => format!("P6\n{w} {h}\n255\n").into_bytes(),
        _ => {
            return Err(CliError::Config(format!(
                "image dumps support 1 or 3 channels, got {c}"
            )))
        }
    };
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(to_byte(img.get(ch, y, x)));
            }
        }
    }
    Ok(out)
}

fn extension(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

/// Writes one image per record into `dir` plus `index.csv` mapping ids to
/// files and scores. Returns every path written, index first.
pub fn dump_syntheses(dir: &Path, records: &[DetectionRecord]) -> Result<Vec<PathBuf>> {
    let mut index = CsvBuilder::new(&["id", "truth", "label", "t_stop", "ood_score", "file"]);
    let mut written = Vec::with_capacity(records.len() + 1);
    let index_path = dir.join("index.csv");
    for r in records {
        let name = format!("{:04}.{}", r.id, extension(r.synthesis.channels()));
        let path = dir.join(&name);
        write_atomic(&path, &encode_portable(&r.synthesis)?)?;
        index.row(&[
            r.id.to_string(),
            r.truth.name().to_string(),
            r.label.to_string(),
            r.t_stop.to_string(),
            r.ood_score.to_string(),
            name,
        ]);
        written.push(path);
    }
    write_atomic(&index_path, index.finish().as_bytes())?;
    let mut all = vec![index_path];
    all.extend(written);
    Ok(all)
}
