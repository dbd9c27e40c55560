//! Binary dataset files: the generating spec plus every labeled image, so a
//! loaded dataset is exactly the generated one.

use std::path::Path;

use resynth_core::synth::{
    Dataset, DatasetSpec, Distribution, JitterSpec, LabeledImage, ShapeClass, Split,
};
use resynth_core::Image;

use crate::bytes::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"RSYNDAT\0";
const VERSION: u16 = 1;

fn shape_code(c: ShapeClass) -> u8 {
    ShapeClass::ALL.iter().position(|&x| x == c).unwrap() as u8
}

fn shape_from_code(r: &ByteReader, code: u8) -> Result<ShapeClass> {
    ShapeClass::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| r.error(format!("unknown shape code {code}")))
}

fn split_code(s: Split) -> u8 {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

fn split_from_code(r: &ByteReader, code: u8) -> Result<Split> {
    match code {
        0 => Ok(Split::Train),
        1 => Ok(Split::Val),
        2 => Ok(Split::Test),
        _ => Err(r.error(format!("unknown split code {code}"))),
    }
}

fn dist_code(d: Distribution) -> u8 {
    match d {
        Distribution::InD => 0,
        Distribution::Ood => 1,
    }
}

fn dist_from_code(r: &ByteReader, code: u8) -> Result<Distribution> {
    match code {
        0 => Ok(Distribution::InD),
        1 => Ok(Distribution::Ood),
        _ => Err(r.error(format!("unknown distribution code {code}"))),
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let spec = &ds.spec;
    let mut w = ByteWriter::new();
    w.put_bytes(MAGIC);
    w.put_u16(VERSION);
    w.put_u16(spec.image_side as u16);
    w.put_u16(spec.channels as u16);
    w.put_u16(spec.ind_classes.len() as u16);
    w.put_u16(spec.ood_classes.len() as u16);
    for &c in spec.ind_classes.iter().chain(&spec.ood_classes) {
        w.put_u8(shape_code(c));
    }
    w.put_u32(spec.train_per_class as u32);
    w.put_u32(spec.val_per_class as u32);
    w.put_u32(spec.test_per_class as u32);
    w.put_f64(spec.jitter.max_offset);
    w.put_f64(spec.jitter.scale.0);
    w.put_f64(spec.jitter.scale.1);
    w.put_f64(spec.jitter.fg.0);
    w.put_f64(spec.jitter.fg.1);
    w.put_f64(spec.jitter.bg.0);
    w.put_f64(spec.jitter.bg.1);
    w.put_u32(ds.images.len() as u32);
    for img in &ds.images {
        w.put_u16(img.label as u16);
        w.put_u8(shape_code(img.class));
        w.put_u8(split_code(img.split));
        w.put_u8(dist_code(img.dist));
        for &v in img.image.as_slice() {
            w.put_f64(v);
        }
    }
    w.into_vec()
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn decode_dataset(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(path, bytes);
    if r.take(8)? != MAGIC {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "not a dataset file (bad magic)".into(),
        });
    }
    let version = r.get_u16()?;
    if version != VERSION {
        return Err(r.error(format!(
            "unsupported dataset format version {version} (expected {VERSION})"
        )));
    }
    let image_side = r.get_u16()? as usize;
    let channels = r.get_u16()? as usize;
    let n_ind = r.get_u16()? as usize;
    let n_ood = r.get_u16()? as usize;
    let mut ind_classes = Vec::with_capacity(n_ind);
    for _ in 0..n_ind {
        let code = r.get_u8()?;
        ind_classes.push(shape_from_code(&r, code)?);
    }
    let mut ood_classes = Vec::with_capacity(n_ood);
    for _ in 0..n_ood {
        let code = r.get_u8()?;
        ood_classes.push(shape_from_code(&r, code)?);
    }
    let train_per_class = r.get_u32()? as usize;
    let val_per_class = r.get_u32()? as usize;
    let test_per_class = r.get_u32()? as usize;
    let jitter = JitterSpec {
        max_offset: r.get_f64()?,
        scale: (r.get_f64()?, r.get_f64()?),
        fg: (r.get_f64()?, r.get_f64()?),
        bg: (r.get_f64()?, r.get_f64()?),
    };
    let spec = DatasetSpec {
        image_side,
        channels,
        ind_classes,
        ood_classes,
        train_per_class,
        val_per_class,
        test_per_class,
        jitter,
    };
    spec.validate().map_err(|e| r.error(e.to_string()))?;

    let n_images = r.get_u32()? as usize;
    let n_classes = spec.ind_classes.len() + spec.ood_classes.len();
    let expected = spec.ind_classes.len() * (train_per_class + val_per_class + test_per_class)
        + spec.ood_classes.len() * test_per_class;
    if n_images != expected {
        return Err(r.error(format!(
            "image count {n_images} does not match the spec's {expected}"
        )));
    }
    let pixels = image_side * image_side * channels;
    let mut images = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let label = r.get_u16()? as usize;
        if label >= n_classes {
            return Err(r.error(format!("label {label} outside 0..{n_classes}")));
        }
        let class_code = r.get_u8()?;
        let class = shape_from_code(&r, class_code)?;
        let split_c = r.get_u8()?;
        let split = split_from_code(&r, split_c)?;
        let dist_c = r.get_u8()?;
        let dist = dist_from_code(&r, dist_c)?;
        let mut data = Vec::with_capacity(pixels);
        for _ in 0..pixels {
            let v = r.get_f64()?;
            if !v.is_finite() {
                return Err(r.error("non-finite pixel value".to_string()));
            }
            data.push(v);
        }
        let image = Image::from_vec(channels, image_side, image_side, data)
            .map_err(|e| r.error(e.to_string()))?;
        images.push(LabeledImage {
            image,
            label,
            class,
            split,
            dist,
        });
    }
    r.finish()?;
    Ok(Dataset { spec, images })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(path, &read_file(path)?)
}
