use std::path::{Path, PathBuf};

use dsc_core::data::{gen_parity, load_cifar10_bin, load_mnist_idx, split_train_val, ChannelStats, Dataset, Split};
use dsc_core::{Error, Result};

use crate::config::DataConfig;

/// Train, optional validation, and test splits.
pub struct Splits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Input(format!("missing data file {}", path.display())))
    }
}

fn limit(d: Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < d.len() => {
            let split = d.split;
            d.slice(0, n, split)
        }
        _ => d,
    }
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn mnist(dir: &Path, train_limit: Option<usize>, validation: bool) -> Result<Splits> {
    let f: Vec<PathBuf> = MNIST_FILES
        .iter()
        .map(|n| require(dir.join(n)))
        .collect::<Result<_>>()?;
    let full = load_mnist_idx(&f[0], &f[1], Split::Train)?;
    let test = load_mnist_idx(&f[2], &f[3], Split::Test)?;
    let (train, val) = if validation {
        let (t, v) = split_train_val(&full);
        (t, Some(v))
    } else {
        (full, None)
    };
    Ok(Splits {
        train: limit(train, train_limit),
        val,
        test,
    })
}

fn cifar(dir: &Path, train_limit: Option<usize>, test_limit: Option<usize>) -> Result<Splits> {
    let train_files: Vec<PathBuf> = (1..=5)
        .map(|i| require(dir.join(format!("data_batch_{i}.bin"))))
        .collect::<Result<_>>()?;
    let test_file = require(dir.join("test_batch.bin"))?;
    let mut train = limit(load_cifar10_bin(&train_files, Split::Train)?, train_limit);
    let mut test = limit(load_cifar10_bin(&[test_file], Split::Test)?, test_limit);
    // normalization statistics come from the training images only
    let stats = ChannelStats::of(&train);
    stats.apply(&mut train);
    stats.apply(&mut test);
    Ok(Splits { train, val: None, test })
}

pub fn load(cfg: &DataConfig) -> Result<Splits> {
    match cfg {
        DataConfig::Parity(p) => {
            let (train, val, test) = gen_parity(p)?;
            Ok(Splits {
                train,
                val: Some(val),
                test,
            })
        }
        DataConfig::Mnist {
            dir,
            train_limit,
            validation,
        } => mnist(dir, *train_limit, *validation),
        DataConfig::Cifar10 {
            dir,
            train_limit,
            test_limit,
        } => cifar(dir, *train_limit, *test_limit),
    }
}
