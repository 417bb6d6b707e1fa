//! One epoch of masked mini-batch training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, batch_iter, AugmentFlags, Dataset};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::optim::Optimizer;
use crate::tensor::{softmax_cross_entropy, BnMode};

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle and augmentation draws.
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub augment: AugmentFlags,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: default_batch(),
            shuffle_seed: 0,
            augment: AugmentFlags::default(),
        }
    }
}

/// Runs one pass over `data` and returns the mean training loss. `epoch` is
/// the global epoch number and only selects the shuffle. Frozen entries get
/// no gradient and are re-zeroed after every step.
pub fn train_epoch(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    data: &Dataset,
    settings: &TrainSettings,
    epoch: usize,
    lr: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }
    let batches = batch_iter(data.len(), settings.batch_size, Some(settings.shuffle_seed), epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.shuffle_seed.wrapping_add(0xa5a5_0000 + epoch as u64));
    let mut total = 0.0f64;
    for idx in &batches {
        let (mut x, y) = data.batch(idx);
        augment(&mut x, settings.augment, &mut rng);
        let logits = model.forward(&x, BnMode::Train)?;
        let (loss, dl) = softmax_cross_entropy(&logits, &y)?;
        if !loss.is_finite() {
            return Err(Error::State(format!("loss became {loss} at epoch {epoch}")));
        }
        total += f64::from(loss) * idx.len() as f64;
        model.backward(&dl)?;
        model.mask_grads();
        opt.step(model, lr)?;
        model.enforce_masks();
    }
    model.clear_caches();
    Ok(total / data.len() as f64)
}
