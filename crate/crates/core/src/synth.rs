//! Synthetic labeled shape datasets.
//!
//! Each image is one anti-aliased shape on a plain background, with jittered
//! position, scale, and intensities. Rendering goes through signed distance
//! functions evaluated at pixel centers, with coverage
//! `clamp(0.5 - sdf, 0, 1)`. The SDFs are sign-exact: a pixel's coverage
//! exceeds 1/2 exactly when its center lies strictly inside the shape, which
//! keeps rasterization testable against independent point-in-shape oracles.
//!
//! In-distribution classes take labels `0..n_ind` in listed order and appear
//! in all three splits; out-of-distribution classes take the following labels
//! and appear in the test split only.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;
use crate::ClassId;

/// The renderable shape vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Star,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Disk,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Cross,
        ShapeClass::Ring,
        ShapeClass::Star,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Cross => "cross",
            ShapeClass::Ring => "ring",
            ShapeClass::Star => "star",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::config(alloc::format!("unknown shape class '{name}'")))
    }

    /// Width/height of the shape's bounding box in pixels.
    ///
    /// Base sizes are tuned so every class covers 30% to 50% of the frame
    /// across the default scale jitter.
    pub fn extent(self, side: f64, scale: f64) -> f64 {
        let u = side * scale;
        match self {
            ShapeClass::Disk => 2.0 * 0.36 * u,
            ShapeClass::Square => 2.0 * 0.32 * u,
            ShapeClass::Triangle => 2.0 * 0.42 * u,
            ShapeClass::Cross => 2.0 * 0.40 * u,
            ShapeClass::Ring => 2.0 * 0.40 * u,
            ShapeClass::Star => 2.0 * core::f64::consts::SQRT_2 * 0.27 * u,
        }
    }

    /// Signed distance from point `(px, py)` (relative to the shape center,
    /// pixels) to the shape boundary; negative inside. The magnitude is only
    /// approximate at interior unions, but the sign is exact everywhere.
    fn sdf(self, px: f64, py: f64, side: f64, scale: f64) -> f64 {
        let u = side * scale;
        match self {
            ShapeClass::Disk => (px * px + py * py).sqrt() - 0.36 * u,
            ShapeClass::Square => box_sdf(px, py, 0.32 * u, 0.32 * u),
            ShapeClass::Triangle => {
                let w = 0.42 * u;
                triangle_sdf(px, py, [(-w, w), (w, w), (0.0, -w)])
            }
            ShapeClass::Cross => {
                let long = 0.40 * u;
                let thick = 0.13 * u;
                box_sdf(px, py, long, thick).min(box_sdf(px, py, thick, long))
            }
            ShapeClass::Ring => {
                let outer = 0.40 * u;
                let inner = 0.22 * u;
                let mid = 0.5 * (outer + inner);
                let half_width = 0.5 * (outer - inner);
                ((px * px + py * py).sqrt() - mid).abs() - half_width
            }
            ShapeClass::Star => {
                let h = 0.27 * u;
                let inv_sqrt2 = core::f64::consts::FRAC_1_SQRT_2;
                let (rx, ry) = (
                    (px + py) * inv_sqrt2,
                    (py - px) * inv_sqrt2,
                );
                box_sdf(px, py, h, h).min(box_sdf(rx, ry, h, h))
            }
        }
    }
}

fn box_sdf(px: f64, py: f64, half_x: f64, half_y: f64) -> f64 {
    let qx = px.abs() - half_x;
    let qy = py.abs() - half_y;
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0)
}

fn dist_point_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (px - a.0, py - a.1);
    let t = ((apx * abx + apy * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

fn triangle_sdf(px: f64, py: f64, verts: [(f64, f64); 3]) -> f64 {
    let mut dist = f64::INFINITY;
    let mut inside = false;
    for i in 0..3 {
        let a = verts[i];
        let b = verts[(i + 1) % 3];
        dist = dist.min(dist_point_segment(px, py, a, b));
        // Even-odd crossing test against a horizontal ray.
        if (a.1 > py) != (b.1 > py) && px < (b.0 - a.0) * (py - a.1) / (b.1 - a.1) + a.0 {
            inside = !inside;
        }
    }
    if inside {
        -dist
    } else {
        dist
    }
}

/// Coverage map (one channel, values in `[0, 1]`) of `class` rendered at
/// `center` (pixels) with the given scale factor.
pub fn rasterize(class: ShapeClass, side: usize, center: (f64, f64), scale: f64) -> Image {
    let mut out = Image::zeros(1, side, side);
    for y in 0..side {
        for x in 0..side {
            let px = x as f64 + 0.5 - center.0;
            let py = y as f64 + 0.5 - center.1;
            let d = class.sdf(px, py, side as f64, scale);
            out.set(0, y, x, (0.5 - d).clamp(0.0, 1.0));
        }
    }
    out
}

/// Which split an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::config(alloc::format!("unknown split '{name}'")))
    }
}

/// Whether a class counts as in-distribution or out-of-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    InD,
    Ood,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::InD => "ind",
            Distribution::Ood => "ood",
        }
    }
}

/// Jitter ranges applied per generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterSpec {
    /// Maximum absolute center offset in pixels (further clamped so the
    /// shape stays fully inside the frame).
    pub max_offset: f64,
    /// Uniform scale factor range.
    pub scale: (f64, f64),
    /// Foreground intensity range.
    pub fg: (f64, f64),
    /// Background intensity range.
    pub bg: (f64, f64),
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            max_offset: 1.5,
            scale: (0.95, 1.10),
            fg: (0.72, 0.92),
            bg: (0.08, 0.22),
        }
    }
}

/// Full description of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub image_side: usize,
    pub channels: usize,
    pub ind_classes: Vec<ShapeClass>,
    pub ood_classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub jitter: JitterSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            image_side: 16,
            channels: 1,
            ind_classes: alloc::vec![
                ShapeClass::Disk,
                ShapeClass::Square,
                ShapeClass::Triangle,
                ShapeClass::Cross,
            ],
            ood_classes: alloc::vec![ShapeClass::Ring, ShapeClass::Star],
            train_per_class: 500,
            val_per_class: 100,
            test_per_class: 100,
            jitter: JitterSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config(alloc::format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.ind_classes.is_empty() {
            return Err(Error::config("at least one in-distribution class required"));
        }
        for c in &self.ind_classes {
            if self.ood_classes.contains(c) {
                return Err(Error::config(alloc::format!(
                    "class '{}' is listed as both in- and out-of-distribution",
                    c.name()
                )));
            }
        }
        let all = self.ind_classes.iter().chain(&self.ood_classes);
        for (i, c) in all.clone().enumerate() {
            if self
                .ind_classes
                .iter()
                .chain(&self.ood_classes)
                .skip(i + 1)
                .any(|d| d == c)
            {
                return Err(Error::config(alloc::format!(
                    "class '{}' listed twice",
                    c.name()
                )));
            }
        }
        let j = &self.jitter;
        if !(j.scale.0 > 0.0 && j.scale.0 <= j.scale.1) {
            return Err(Error::config("scale jitter range must be 0 < lo <= hi"));
        }
        for (name, (lo, hi)) in [("fg", j.fg), ("bg", j.bg)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::config(alloc::format!(
                    "{name} intensity range [{lo}, {hi}] must be ordered and within [0, 1]"
                )));
            }
        }
        if j.bg.1 >= j.fg.0 {
            return Err(Error::config(
                "background intensities must stay strictly below foreground intensities",
            ));
        }
        if !(j.max_offset >= 0.0) {
            return Err(Error::config("max_offset must be non-negative"));
        }
        let side = self.image_side as f64;
        for c in all {
            let min_extent = c.extent(side, j.scale.0);
            let max_extent = c.extent(side, j.scale.1);
            if min_extent < 3.0 {
                return Err(Error::config(alloc::format!(
                    "'{}' renders smaller than 3 pixels at side {} (extent {min_extent:.2})",
                    c.name(),
                    self.image_side
                )));
            }
            if max_extent > side - 1.0 {
                return Err(Error::config(alloc::format!(
                    "'{}' does not fit inside a {}-pixel frame at max scale (extent {max_extent:.2})",
                    c.name(),
                    self.image_side
                )));
            }
        }
        Ok(())
    }

    /// Number of in-distribution classes (the classifier's label space).
    pub fn n_ind_classes(&self) -> usize {
        self.ind_classes.len()
    }

    pub fn n_total_classes(&self) -> usize {
        self.ind_classes.len() + self.ood_classes.len()
    }

    /// Shape for a global label.
    pub fn class_of(&self, label: ClassId) -> Option<ShapeClass> {
        let n_ind = self.ind_classes.len();
        if label < n_ind {
            Some(self.ind_classes[label])
        } else {
            self.ood_classes.get(label - n_ind).copied()
        }
    }

    pub fn distribution_of(&self, label: ClassId) -> Distribution {
        if label < self.ind_classes.len() {
            Distribution::InD
        } else {
            Distribution::Ood
        }
    }
}

/// One generated image with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: ClassId,
    pub class: ShapeClass,
    pub split: Split,
    pub dist: Distribution,
}

/// A full generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledImage> {
        self.images.iter().filter(move |img| img.split == split)
    }

    /// Mean pixel intensity over the train split (the cutout fill default).
    pub fn train_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for img in self.split(Split::Train) {
            sum += img.image.as_slice().iter().sum::<f64>();
            n += img.image.len();
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Renders one image of `class` with jitter drawn from `rng`.
///
/// Draw order: scale, x offset, y offset, then per channel background and
/// foreground intensity. Pixels are quantized to `f32`-representable values
/// so persisted datasets round-trip bit-exactly.
pub fn generate_image(spec: &DatasetSpec, class: ShapeClass, rng: &mut RngStream) -> Image {
    let side = spec.image_side;
    let j = &spec.jitter;
    let scale = j.scale.0 + (j.scale.1 - j.scale.0) * rng.next_uniform();
    let allowed = ((side as f64 - class.extent(side as f64, scale)) / 2.0 - 0.5).max(0.0);
    let max_offset = j.max_offset.min(allowed);
    let dx = (2.0 * rng.next_uniform() - 1.0) * max_offset;
    let dy = (2.0 * rng.next_uniform() - 1.0) * max_offset;
    let center = (side as f64 / 2.0 + dx, side as f64 / 2.0 + dy);
    let coverage = rasterize(class, side, center, scale);

    let mut out = Image::zeros(spec.channels, side, side);
    for c in 0..spec.channels {
        let bg = j.bg.0 + (j.bg.1 - j.bg.0) * rng.next_uniform();
        let fg = j.fg.0 + (j.fg.1 - j.fg.0) * rng.next_uniform();
        for (dst, &cov) in out.channel_mut(c).iter_mut().zip(coverage.channel(0)) {
            *dst = bg + (fg - bg) * cov;
        }
    }
    out.snap_to_f32();
    out
}

/// Generates the full dataset described by `spec`.
///
/// Every image gets its own stream `root / ("class", label) / (split, index)`,
/// so per-image content is independent of generation order and of the other
/// counts.
pub fn generate_dataset(spec: &DatasetSpec, root: &RngStream) -> Result<Dataset> {
    spec.validate()?;
    let mut images = Vec::new();
    for split in Split::ALL {
        let count = match split {
            Split::Train => spec.train_per_class,
            Split::Val => spec.val_per_class,
            Split::Test => spec.test_per_class,
        };
        for (label, &class) in spec.ind_classes.iter().enumerate() {
            push_class_images(spec, &mut images, root, class, label, split, count);
        }
        if split == Split::Test {
            for (i, &class) in spec.ood_classes.iter().enumerate() {
                let label = spec.ind_classes.len() + i;
                push_class_images(spec, &mut images, root, class, label, split, count);
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        images,
    })
}

fn push_class_images(
    spec: &DatasetSpec,
    images: &mut Vec<LabeledImage>,
    root: &RngStream,
    class: ShapeClass,
    label: ClassId,
    split: Split,
    count: usize,
) {
    let class_stream = root.split("class", label as u64);
    for i in 0..count {
        let mut img_stream = class_stream.split(split.name(), i as u64);
        let image = generate_image(spec, class, &mut img_stream);
        images.push(LabeledImage {
            image,
            label,
            class,
            split,
            dist: spec.distribution_of(label),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            train_per_class: 6,
            val_per_class: 3,
            test_per_class: 2,
            ..DatasetSpec::default()
        }
    }

    /// Independent point-in-shape tests, written directly from the geometry
    /// rather than via the SDFs.
    fn inside_oracle(class: ShapeClass, px: f64, py: f64, side: f64, scale: f64) -> bool {
        let u = side * scale;
        let r = (px * px + py * py).sqrt();
        match class {
            ShapeClass::Disk => r < 0.36 * u,
            ShapeClass::Square => px.abs() < 0.32 * u && py.abs() < 0.32 * u,
            ShapeClass::Triangle => {
                // Apex (0, -w), base corners (+-w, w): inside means below the
                // two slanted edges and above the base.
                let w = 0.42 * u;
                py < w && (py - w) > 2.0 * (px.abs() - w)
            }
            ShapeClass::Cross => {
                let long = 0.40 * u;
                let thick = 0.13 * u;
                (px.abs() < long && py.abs() < thick) || (px.abs() < thick && py.abs() < long)
            }
            ShapeClass::Ring => {
                let outer = 0.40 * u;
                let inner = 0.22 * u;
                r > inner && r < outer
            }
            ShapeClass::Star => {
                let h = 0.27 * u;
                let s = core::f64::consts::FRAC_1_SQRT_2;
                let (rx, ry) = ((px + py) * s, (py - px) * s);
                (px.abs() < h && py.abs() < h) || (rx.abs() < h && ry.abs() < h)
            }
        }
    }

    #[test]
    fn coverage_threshold_matches_point_oracles() {
        let side = 16usize;
        let mut rng = RngStream::new(7).split("raster", 0);
        for class in ShapeClass::ALL {
            for trial in 0..10 {
                let scale = 0.95 + 0.15 * rng.next_uniform();
                let cx = 8.0 + (2.0 * rng.next_uniform() - 1.0) * 1.3;
                let cy = 8.0 + (2.0 * rng.next_uniform() - 1.0) * 1.3;
                let cov = rasterize(class, side, (cx, cy), scale);
                let mut mismatches = 0;
                for y in 0..side {
                    for x in 0..side {
                        let rendered = cov.get(0, y, x) > 0.5;
                        let oracle = inside_oracle(
                            class,
                            x as f64 + 0.5 - cx,
                            y as f64 + 0.5 - cy,
                            side as f64,
                            scale,
                        );
                        if rendered != oracle {
                            mismatches += 1;
                        }
                    }
                }
                assert_eq!(
                    mismatches,
                    0,
                    "{} trial {trial}: thresholded coverage disagrees with geometry",
                    class.name()
                );
            }
        }
    }

    #[test]
    fn every_class_fills_thirty_to_eighty_percent() {
        let side = 16usize;
        for class in ShapeClass::ALL {
            for scale in [0.95, 1.0, 1.10] {
                let cov = rasterize(class, side, (8.0, 8.0), scale);
                let mass: f64 = cov.as_slice().iter().sum();
                let frac = mass / (side * side) as f64;
                assert!(
                    (0.30..=0.80).contains(&frac),
                    "{} at scale {scale} fills {frac:.3}",
                    class.name()
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_dataset(&spec, &RngStream::new(11)).unwrap();
        let b = generate_dataset(&spec, &RngStream::new(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, &RngStream::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn counts_splits_and_labels_are_exact() {
        let spec = small_spec();
        let ds = generate_dataset(&spec, &RngStream::new(3)).unwrap();
        for (split, per_class) in [(Split::Train, 6), (Split::Val, 3), (Split::Test, 2)] {
            for (label, _) in spec.ind_classes.iter().enumerate() {
                let n = ds.split(split).filter(|im| im.label == label).count();
                assert_eq!(n, per_class, "{} label {label}", split.name());
            }
        }
        // Out-of-distribution classes live in the test split only.
        for im in &ds.images {
            if im.dist == Distribution::Ood {
                assert_eq!(im.split, Split::Test);
                assert!(im.label >= spec.n_ind_classes());
            }
        }
        for (i, &class) in spec.ood_classes.iter().enumerate() {
            let label = spec.n_ind_classes() + i;
            let n = ds.split(Split::Test).filter(|im| im.label == label).count();
            assert_eq!(n, 2, "ood class {}", class.name());
            assert_eq!(ds.spec.class_of(label), Some(class));
        }
    }

    #[test]
    fn pixels_are_in_range_and_f32_exact() {
        let spec = small_spec();
        let ds = generate_dataset(&spec, &RngStream::new(4)).unwrap();
        for im in &ds.images {
            for &v in im.image.as_slice() {
                assert!((0.0..=1.0).contains(&v));
                assert_eq!(v, v as f32 as f64);
            }
        }
    }

    #[test]
    fn centered_unjittered_square_is_symmetric() {
        let spec = DatasetSpec {
            jitter: JitterSpec {
                max_offset: 0.0,
                scale: (1.0, 1.0),
                ..JitterSpec::default()
            },
            ..small_spec()
        };
        let mut rng = RngStream::new(5).split("sym", 0);
        let img = generate_image(&spec, ShapeClass::Square, &mut rng);
        let side = spec.image_side;
        for y in 0..side {
            for x in 0..side {
                assert_eq!(img.get(0, y, x), img.get(0, y, side - 1 - x));
                assert_eq!(img.get(0, y, x), img.get(0, side - 1 - y, x));
            }
        }
    }

    #[test]
    fn three_channel_images_have_independent_intensities() {
        let spec = DatasetSpec {
            channels: 3,
            ..small_spec()
        };
        let mut rng = RngStream::new(6).split("rgb", 0);
        let img = generate_image(&spec, ShapeClass::Disk, &mut rng);
        assert_eq!(img.channels(), 3);
        let c0 = img.channel(0).to_vec();
        let c1 = img.channel(1).to_vec();
        assert_ne!(c0, c1);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let undersized = DatasetSpec {
            image_side: 4,
            ..DatasetSpec::default()
        };
        assert!(matches!(undersized.validate(), Err(Error::Config(_))));

        let duplicated = DatasetSpec {
            ood_classes: alloc::vec![ShapeClass::Disk],
            ..DatasetSpec::default()
        };
        assert!(matches!(duplicated.validate(), Err(Error::Config(_))));

        let two_channel = DatasetSpec {
            channels: 2,
            ..DatasetSpec::default()
        };
        assert!(matches!(two_channel.validate(), Err(Error::Config(_))));

        let murky = DatasetSpec {
            jitter: JitterSpec {
                bg: (0.1, 0.8),
                ..JitterSpec::default()
            },
            ..DatasetSpec::default()
        };
        assert!(matches!(murky.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn train_mean_sits_between_background_and_foreground() {
        let ds = generate_dataset(&small_spec(), &RngStream::new(8)).unwrap();
        let mean = ds.train_mean();
        assert!(mean > 0.08 && mean < 0.92, "mean {mean}");
    }
}
