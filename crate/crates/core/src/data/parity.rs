use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Noisy k-parity over `{−1, +1}^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParityConfig {
    pub dim: usize,
    pub order: usize,
    /// 1-based, strictly increasing; drawn from `seed` when absent.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    pub flip_prob: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for ParityConfig {
    fn default() -> Self {
        ParityConfig {
            dim: 50,
            order: 5,
            indices: None,
            flip_prob: 0.1,
            train: 15_000,
            val: 5_000,
            test: 5_000,
            seed: 0,
        }
    }
}

impl ParityConfig {
    /// The parity index set, validated or drawn.
    pub fn resolve_indices(&self) -> Result<Vec<usize>> {
        if self.order == 0 || self.order > self.dim {
            return Err(Error::Config(format!(
                "parity order {} must be in [1, {}]",
                self.order, self.dim
            )));
        }
        if !(0.0..1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} not in [0, 1)", self.flip_prob)));
        }
        match &self.indices {
            Some(ix) => {
                let ok = ix.len() == self.order
                    && ix.windows(2).all(|w| w[0] < w[1])
                    && ix.first().is_some_and(|&i| i >= 1)
                    && ix.last().is_some_and(|&i| i <= self.dim);
                if !ok {
                    return Err(Error::Config(format!(
                        "parity indices {ix:?} must be {} strictly increasing values in [1, {}]",
                        self.order, self.dim
                    )));
                }
                Ok(ix.clone())
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1d1c);
                let mut ix: Vec<usize> = sample(&mut rng, self.dim, self.order)
                    .into_iter()
                    .map(|i| i + 1)
                    .collect();
                ix.sort_unstable();
                Ok(ix)
            }
        }
    }
}

/// Generates `(train, val, test)`. Features are raw ±1; the clean label is
/// the product of the selected coordinates, flipped with `flip_prob`;
/// −1 maps to class 0 and +1 to class 1.
pub fn gen_parity(cfg: &ParityConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let indices = cfg.resolve_indices()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut make = |n: usize, split: Split| -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config(format!("parity {} split is empty", split.name())));
        }
        let mut x = Vec::with_capacity(n * cfg.dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let start = x.len();
            for _ in 0..cfg.dim {
                x.push(if rng.random::<bool>() { 1.0f32 } else { -1.0 });
            }
            let clean: f32 = indices.iter().map(|&i| x[start + i - 1]).product();
            let label = if rng.random::<f64>() < cfg.flip_prob {
                -clean
            } else {
                clean
            };
            y.push(usize::from(label > 0.0));
        }
        Dataset::new(Tensor::new(&[n, cfg.dim], x)?, y, split, 2)
    };
    let train = make(cfg.train, Split::Train)?;
    let val = make(cfg.val, Split::Val)?;
    let test = make(cfg.test, Split::Test)?;
    Ok((train, val, test))
}
