//! In-memory image datasets, the seeded synthetic pattern set, and test-bed
//! sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{seed, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Source {
    Mnist,
    Synthetic,
}

/// Images `[N, C, H, W]` with values in `[0, 1]` and labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
    source: Source,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: Split, source: Source) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::InvalidDataset(format!(
                "images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!("label {bad} outside [0, {num_classes})")));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDataset(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one image, `[C, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> Tensor {
        let size: usize = self.image_shape().iter().product();
        Tensor::new(
            self.image_shape().to_vec(),
            self.images.data()[i * size..(i + 1) * size].to_vec(),
        )
        .expect("image slice")
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// First `n` examples (or all of them if `n >= len`).
    pub fn truncate(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let size: usize = self.image_shape().iter().product();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Dataset {
            images: Tensor::new(shape, self.images.data()[..n * size].to_vec()).expect("prefix"),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }
}

pub const SYNTHETIC_SIDE: usize = 28;
/// Number of distinct pattern families the synthetic generator can draw.
pub const SYNTHETIC_MAX_CLASSES: usize = 10;

/// Seeded 28x28 single-channel images, one geometric pattern family per
/// class (bars, diagonals, crosses, disk, ring, box, double bar), with random
/// placement, stroke width and intensity plus additive Gaussian noise,
/// clipped to `[0, 1]`. Examples are interleaved by class.
pub fn synthetic(num_classes: usize, n_per_class: usize, seed: u64, split: Split) -> Result<Dataset> {
    if !(2..=SYNTHETIC_MAX_CLASSES).contains(&num_classes) {
        return Err(Error::config(format!(
            "synthetic data supports 2..={SYNTHETIC_MAX_CLASSES} classes, got {num_classes}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::config("synthetic data needs at least one image per class"));
    }
    let stream = match split {
        Split::Train => "synthetic/train",
        Split::Test => "synthetic/test",
    };
    let mut rng = seed::rng(seed::derive(seed, stream));
    let noise = Normal::new(0.0, 0.08).expect("valid sigma");
    let side = SYNTHETIC_SIDE;
    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for class in 0..num_classes {
            let p = PatternParams {
                cy: 13.5 + rng.random_range(-4.0..=4.0),
                cx: 13.5 + rng.random_range(-4.0..=4.0),
                half_width: rng.random_range(1.0..=1.8),
                size: rng.random_range(6.0..=9.0),
                intensity: rng.random_range(0.7..=1.0),
            };
            for y in 0..side {
                for x in 0..side {
                    let v = p.intensity * coverage(class, &p, y as f64, x as f64);
                    let v = v + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
            labels.push(class);
        }
    }
    let images = Tensor::new(vec![n, 1, side, side], data)?;
    Dataset::new(images, labels, num_classes, split, Source::Synthetic)
}

struct PatternParams {
    cy: f64,
    cx: f64,
    half_width: f64,
    size: f64,
    intensity: f64,
}

/// 1.0 where pixel `(y, x)` is inside the pattern stroke, else 0.0.
fn coverage(class: usize, p: &PatternParams, y: f64, x: f64) -> f64 {
    let (dy, dx) = (y - p.cy, x - p.cx);
    let w = p.half_width;
    let s = p.size;
    let r = libm::sqrt(dy * dy + dx * dx);
    let within = |d: f64| libm::fabs(d) <= w;
    let on = match class {
        0 => within(dy) && libm::fabs(dx) <= s,
        1 => within(dx) && libm::fabs(dy) <= s,
        2 => within((dy - dx) / core::f64::consts::SQRT_2) && r <= s,
        3 => within((dy + dx) / core::f64::consts::SQRT_2) && r <= s,
        4 => (within(dy) && libm::fabs(dx) <= s) || (within(dx) && libm::fabs(dy) <= s),
        5 => (within((dy - dx) / core::f64::consts::SQRT_2) || within((dy + dx) / core::f64::consts::SQRT_2)) && r <= s,
        6 => r <= s * 0.6,
        7 => libm::fabs(r - s * 0.8) <= w,
        8 => {
            let (ay, ax) = (libm::fabs(dy), libm::fabs(dx));
            ay.max(ax) <= s * 0.8 && (ay.max(ax) - s * 0.8).abs() <= w
        }
        _ => (within(dy - s * 0.5) || within(dy + s * 0.5)) && libm::fabs(dx) <= s,
    };
    if on {
        1.0
    } else {
        0.0
    }
}

/// Fixed set of evaluation images drawn from a test split.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TestBed {
    pub indices: Vec<usize>,
}

impl TestBed {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Seeded sample without replacement, stratified across classes.
///
/// Each class contributes `size / classes` images; the remainder goes to a
/// seeded random subset of classes. Classes short on images are topped up
/// from the remaining pool. Indices are returned in ascending order.
pub fn sample_testbed(ds: &Dataset, size: usize, seed_value: u64) -> Result<TestBed> {
    if size == 0 || size > ds.len() {
        return Err(Error::config(format!(
            "test bed size {size} must be in 1..={}",
            ds.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(seed_value, "testbed"));
    let k = ds.num_classes();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in ds.labels().iter().enumerate() {
        per_class[l].push(i);
    }
    for c in per_class.iter_mut() {
        c.shuffle(&mut rng);
    }
    let mut quota = vec![size / k; k];
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    for &c in order.iter().take(size % k) {
        quota[c] += 1;
    }

    let mut chosen = Vec::with_capacity(size);
    let mut leftover = Vec::new();
    for (c, pool) in per_class.iter().enumerate() {
        let take = quota[c].min(pool.len());
        chosen.extend_from_slice(&pool[..take]);
        leftover.extend_from_slice(&pool[take..]);
    }
    if chosen.len() < size {
        leftover.shuffle(&mut rng);
        let missing = size - chosen.len();
        chosen.extend_from_slice(&leftover[..missing]);
    }
    chosen.sort_unstable();
    Ok(TestBed { indices: chosen })
}
