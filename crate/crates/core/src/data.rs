//! Synthetic shape dataset, photometric shift and epoch ordering.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::augops::{augment_image, AugOpKind};
use crate::error::{Error, Result};
use crate::rng::{RngContext, Stream};

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const SHAPE_NAMES: [&str; 4] = ["square", "circle", "cross", "triangle"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Shifted,
}

/// `n` channel-first images with labels in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Array,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Array, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() < 2 || images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                primitive: "dataset",
                lhs: images.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self { images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn pixels(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Array {
        Array::new(self.image_shape().to_vec(), self.pixels(i).to_vec()).expect("consistent dataset")
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        0 => dx.abs() <= r && dy.abs() <= r,
        1 => dx * dx + dy * dy <= r * r,
        2 => {
            let arm = r / 3.0;
            (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
        }
        _ => dy >= -r && dy <= r && dx.abs() <= 0.5 * (dy + r),
    }
}

/// Renders image `index`: one filled shape on a flat background.
fn render(seed: u64, index: u64, shape: usize) -> Vec<f64> {
    let rng = RngContext::new(seed, Stream::Data).at(0, index, 0);
    let mut draw = 0u64;
    let mut next = || {
        draw += 1;
        rng.uniform(draw)
    };
    // narrow photometric band: dim background, brighter fill
    let background = [0.15 + 0.15 * next(), 0.15 + 0.15 * next(), 0.15 + 0.15 * next()];
    let fill = [0.65 + 0.15 * next(), 0.65 + 0.15 * next(), 0.65 + 0.15 * next()];
    let half = IMAGE_SIDE as f64 / 2.0;
    let r = 7.0 + 4.0 * next();
    let cx = half + 8.0 * (next() - 0.5);
    let cy = half + 8.0 * (next() - 0.5);

    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut out = vec![0.0; CHANNELS * plane];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let hit = inside(shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r);
            let color = if hit { fill } else { background };
            for c in 0..CHANNELS {
                out[c * plane + y * IMAGE_SIDE + x] = color[c];
            }
        }
    }
    out
}

/// `n` images of 32x32x3; image `i` shows shape `i mod classes`.
pub fn generate_synthetic(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if !(2..=SHAPE_NAMES.len()).contains(&classes) {
        return Err(Error::Config(alloc::format!("classes must be in 2..=4, got {classes}")));
    }
    if n < classes {
        return Err(Error::Config(alloc::format!("need n >= classes, got n={n} classes={classes}")));
    }
    let mut data = Vec::with_capacity(n * CHANNELS * IMAGE_SIDE * IMAGE_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        data.extend(render(seed, i as u64, label));
        labels.push(label);
    }
    let images = Array::new(vec![n, CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data)?;
    Dataset::new(images, labels, classes, Split::Train)
}

/// Photometric distribution shift: each image gets one factor from each list.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSpec {
    pub brightness_factors: Vec<f64>,
    pub contrast_factors: Vec<f64>,
    pub noise_stds: Vec<f64>,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self { brightness_factors: vec![1.0], contrast_factors: vec![1.0], noise_stds: vec![0.0] }
    }

    /// Shift used for the shifted validation split.
    pub fn evaluation() -> Self {
        Self {
            brightness_factors: vec![0.5, 0.7, 1.4, 2.0],
            contrast_factors: vec![0.5, 0.7, 1.4, 2.0],
            noise_stds: vec![0.1, 0.2, 0.3, 0.4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [&self.brightness_factors, &self.contrast_factors, &self.noise_stds];
        for (kind, list) in AugOpKind::ALL.into_iter().zip(lists) {
            let b = kind.bounds();
            if list.is_empty() || list.iter().any(|v| !(b.lo..=b.hi).contains(v)) {
                return Err(Error::Config(alloc::format!(
                    "{} shift factors {list:?} must be non-empty and within [{}, {}]",
                    kind.name(),
                    b.lo,
                    b.hi
                )));
            }
        }
        Ok(())
    }
}

/// Applies a deterministic per-image shift through the augmentation ops.
pub fn apply_shift(dataset: &Dataset, spec: &ShiftSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let len = dataset.image_len();
    let mut data = Vec::with_capacity(dataset.images.len());
    let mut z = vec![0.0; len];
    for i in 0..dataset.len() {
        let rng = RngContext::new(seed, Stream::Data).at(1, i as u64, 0);
        let pick = |list: &[f64], k: u64| list[rng.below(k, list.len() as u64) as usize];
        let m = [pick(&spec.brightness_factors, 0), pick(&spec.contrast_factors, 1), pick(&spec.noise_stds, 2)];
        RngContext::new(seed, Stream::Noise).at(1, i as u64, 0).fill_normal(&mut z);
        let shifted = augment_image(&dataset.image(i), m, [true; 3], &z)?;
        data.extend_from_slice(shifted.data());
    }
    let images = Array::new(dataset.images.shape().to_vec(), data)?;
    Dataset::new(images, dataset.labels.clone(), dataset.classes, Split::Shifted)
}

/// Deterministic shuffle of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let rng = RngContext::new(seed, Stream::Data).at(epoch, 0, 2);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64, i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}
