//! Model checkpoint files: network dimensions plus the flat parameter
//! vector. Loading reconstructs the architecture and overwrites its
//! parameters, so a saved model round-trips bit for bit.

use std::path::Path;

use resynth_core::nn::{Classifier, ScoreNetwork};
use resynth_core::RngStream;

use crate::bytes::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"RSYNMDL\0";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Score,
    Classifier,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Score => 0,
            ModelKind::Classifier => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Score => "score network",
            ModelKind::Classifier => "classifier",
        }
    }
}

/// Architecture facts a checkpoint carries besides its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub in_channels: usize,
    pub n_classes: usize,
    /// Image side the model was trained on; checked against the dataset at
    /// load time because nothing here is meant to transfer across sizes.
    pub image_side: usize,
}

fn encode(header: ModelHeader, params: &[f64]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(MAGIC);
    w.put_u16(VERSION);
    w.put_u8(header.kind.code());
    w.put_u16(header.in_channels as u16);
    w.put_u16(header.n_classes as u16);
    w.put_u16(header.image_side as u16);
    w.put_u64(params.len() as u64);
    for &p in params {
        w.put_f64(p);
    }
    w.into_vec()
}

fn decode(path: &Path, bytes: &[u8], expect: ModelKind) -> Result<(ModelHeader, Vec<f64>)> {
    let mut r = ByteReader::new(path, bytes);
    if r.take(8)? != MAGIC {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "not a model file (bad magic)".into(),
        });
    }
    let version = r.get_u16()?;
    if version != VERSION {
        return Err(r.error(format!(
            "unsupported model format version {version} (expected {VERSION})"
        )));
    }
    let kind = match r.get_u8()? {
        0 => ModelKind::Score,
        1 => ModelKind::Classifier,
        other => return Err(r.error(format!("unknown model kind code {other}"))),
    };
    if kind != expect {
        return Err(r.error(format!(
            "this is a {} checkpoint, expected a {}",
            kind.name(),
            expect.name()
        )));
    }
    let header = ModelHeader {
        kind,
        in_channels: r.get_u16()? as usize,
        n_classes: r.get_u16()? as usize,
        image_side: r.get_u16()? as usize,
    };
    let n_params = r.get_u64()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let v = r.get_f64()?;
        if !v.is_finite() {
            return Err(r.error("non-finite parameter".to_string()));
        }
        params.push(v);
    }
    r.finish()?;
    Ok((header, params))
}

pub fn save_score(path: &Path, net: &ScoreNetwork, header: ModelHeader) -> Result<()> {
    write_atomic(path, &encode(header, &net.flat_params()))
}

pub fn save_classifier(path: &Path, net: &Classifier, header: ModelHeader) -> Result<()> {
    write_atomic(path, &encode(header, &net.flat_params()))
}

pub fn load_score(path: &Path) -> Result<(ModelHeader, ScoreNetwork)> {
    let bytes = read_file(path)?;
    let (header, params) = decode(path, &bytes, ModelKind::Score)?;
    let mut throwaway = RngStream::new(0).split("model-load", 0);
    let mut net = ScoreNetwork::new(header.in_channels, header.n_classes, &mut throwaway)?;
    net.load_flat_params(&params)
        .map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })?;
    Ok((header, net))
}

pub fn load_classifier(path: &Path) -> Result<(ModelHeader, Classifier)> {
    let bytes = read_file(path)?;
    let (header, params) = decode(path, &bytes, ModelKind::Classifier)?;
    let mut throwaway = RngStream::new(0).split("model-load", 0);
    let mut net = Classifier::new(header.in_channels, header.n_classes, &mut throwaway)?;
    net.load_flat_params(&params)
        .map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })?;
    Ok((header, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use resynth_core::Image;

    #[test]
    fn score_checkpoints_round_trip_bit_for_bit() {
        let mut rng = RngStream::new(3).split("init", 0);
        let net = ScoreNetwork::new(1, 4, &mut rng).unwrap();
        let header = ModelHeader {
            kind: ModelKind::Score,
            in_channels: 1,
            n_classes: 4,
            image_side: 16,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("score.bin");
        save_score(&path, &net, header).unwrap();
        let (h, loaded) = load_score(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(loaded.flat_params(), net.flat_params());

        let x = Image::filled(1, 6, 6, 0.25);
        let mut r = RngStream::new(9).split("probe", 0);
        let noisy = x.noise_like(&mut r);
        use resynth_core::diffusion::NoisePredictor;
        let a = net.predict_noise(&noisy, 5, Some(2)).unwrap();
        let b = loaded.predict_noise(&noisy, 5, Some(2)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn classifier_checkpoints_round_trip_and_kinds_are_checked() {
        let mut rng = RngStream::new(4).split("init", 0);
        let net = Classifier::new(1, 3, &mut rng).unwrap();
        let header = ModelHeader {
            kind: ModelKind::Classifier,
            in_channels: 1,
            n_classes: 3,
            image_side: 8,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.bin");
        save_classifier(&path, &net, header).unwrap();
        let (h, loaded) = load_classifier(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(loaded.flat_params(), net.flat_params());

        let err = load_score(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("classifier checkpoint"), "{msg}");
    }

    #[test]
    fn wrong_parameter_count_is_a_format_error() {
        let mut rng = RngStream::new(5).split("init", 0);
        let net = Classifier::new(1, 2, &mut rng).unwrap();
        let header = ModelHeader {
            kind: ModelKind::Classifier,
            in_channels: 1,
            n_classes: 5,
            image_side: 8,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.bin");
        save_classifier(&path, &net, header).unwrap();
        assert!(load_classifier(&path).is_err());
    }
}
