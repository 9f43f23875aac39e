//! Dataset selection: MNIST IDX files or the offline synthetic set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sanity_core::data::{self, Dataset, Split};

use crate::{idx, Result};

/// Directory holding the four standard MNIST files; overrides path flags.
pub const DATA_DIR_ENV: &str = "SSC_DATA_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        MnistPaths {
            train_images: dir.join(TRAIN_IMAGES),
            train_labels: dir.join(TRAIN_LABELS),
            test_images: dir.join(TEST_IMAGES),
            test_labels: dir.join(TEST_LABELS),
        }
    }

    /// Paths under `$SSC_DATA_DIR`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(DATA_DIR_ENV).map(Self::in_dir)
    }

    pub fn all_exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            classes: 10,
            train_per_class: 300,
            test_per_class: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetChoice {
    Mnist(MnistPaths),
    Synthetic(SyntheticParams),
}

impl DatasetChoice {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetChoice::Mnist(_) => "mnist",
            DatasetChoice::Synthetic(_) => "synthetic",
        }
    }

    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self {
            DatasetChoice::Mnist(p) => match split {
                Split::Train => idx::load_mnist(&p.train_images, &p.train_labels, split),
                Split::Test => idx::load_mnist(&p.test_images, &p.test_labels, split),
            },
            DatasetChoice::Synthetic(s) => {
                let n = match split {
                    Split::Train => s.train_per_class,
                    Split::Test => s.test_per_class,
                };
                Ok(data::synthetic(s.classes, n, s.seed, split)?)
            }
        }
    }
}
