//! Datasets: the noisy parity generator, MNIST IDX and CIFAR-10 binary
//! loaders, batching and image augmentation.

mod batch;
mod cifar;
mod mnist;
mod parity;

pub use batch::{augment, batch_iter, hflip_image, AugmentFlags};
pub use cifar::{load_cifar10_bin, ChannelStats};
pub use mnist::{load_mnist_idx, read_idx_images, read_idx_labels, split_train_val};
pub use parity::{gen_parity, ParityConfig};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Inputs (`N × example shape`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        if inputs.leading() != labels.len() {
            return Err(shape_err!("{} inputs but {} labels", inputs.leading(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(crate::Error::Input(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            inputs,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (
            self.inputs.gather_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Examples `start..end` as a new dataset with the given split tag.
    pub fn slice(&self, start: usize, end: usize, split: Split) -> Dataset {
        let idx: Vec<usize> = (start..end).collect();
        let (inputs, labels) = self.batch(&idx);
        Dataset {
            inputs,
            labels,
            split,
            classes: self.classes,
        }
    }
}
