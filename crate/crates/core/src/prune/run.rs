use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::space::{check_disjoint, freeze_killed, prune_event, PruneMask, PruneSpace, SpaceConfig, SpaceKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerSelector, Model};
use crate::optim::{LrStageSchedule, Optimizer};
use crate::train::train_epoch;

pub use crate::train::TrainSettings;

/// One training phase: an optional pruning stage over a set of spaces,
/// then fine-tuning with the support frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub name: String,
    #[serde(default)]
    pub spaces: Vec<SpaceConfig>,
    /// Length of the pruning (or plain training) stage; every space's
    /// `niter` must fit inside it.
    pub epochs: usize,
    #[serde(default)]
    pub finetune_epochs: usize,
    pub lr: LrStageSchedule,
    /// Fine-tuning schedule; defaults to a constant tenth of `lr.base_lr`.
    #[serde(default)]
    pub finetune_lr: Option<LrStageSchedule>,
    /// Hold parameters outside this phase's spaces fixed.
    #[serde(default)]
    pub freeze_others: bool,
    /// Re-rank all members at each event so killed members may return.
    #[serde(default)]
    pub resurrect: bool,
}

/// Per-epoch history row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub train_loss: f64,
    pub val_error: Option<f64>,
    pub test_error: Option<f64>,
    pub supports: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub test: Option<&'a Dataset>,
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub records: Vec<EpochRecord>,
    pub spaces: Vec<PruneSpace>,
    pub masks: Vec<PruneMask>,
    /// Mask per space after every pruning-stage epoch.
    pub mask_history: Vec<Vec<PruneMask>>,
}

impl PhaseOutcome {
    pub fn supports(&self) -> Vec<(String, usize)> {
        self.spaces
            .iter()
            .zip(&self.masks)
            .map(|(s, m)| (s.name.clone(), m.support_size()))
            .collect()
    }
}

impl PhaseConfig {
    /// Plain training with no pruning.
    pub fn training(name: &str, epochs: usize, lr: LrStageSchedule) -> Self {
        PhaseConfig {
            name: name.into(),
            spaces: Vec::new(),
            epochs,
            finetune_epochs: 0,
            lr,
            finetune_lr: None,
            freeze_others: false,
            resurrect: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        if let Some(f) = &self.finetune_lr {
            f.validate()?;
        }
        for s in &self.spaces {
            if s.schedule.niter > self.epochs {
                return Err(Error::Config(format!(
                    "phase `{}`: space `{}` has niter {} but the phase has {} epochs",
                    self.name, s.name, s.schedule.niter, self.epochs
                )));
            }
        }
        Ok(())
    }
}

/// Observer hook called after every epoch with the current model, record,
/// spaces and masks.
pub type EpochObserver<'a> = dyn FnMut(&Model<f32>, &EpochRecord, &[PruneSpace], &[PruneMask]) + 'a;

/// Runs one phase: for each epoch, a masked training pass followed by a
/// prune event per space when its schedule calls for one; then fine-tuning.
/// `first_epoch` numbers the records globally across phases.
pub fn run_phase(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    cfg: &PhaseConfig,
    data: RunData<'_>,
    settings: &TrainSettings,
    first_epoch: usize,
    observer: Option<&mut EpochObserver<'_>>,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    let spaces = cfg
        .spaces
        .iter()
        .map(|s| PruneSpace::build(model, s))
        .collect::<Result<Vec<_>>>()?;
    check_disjoint(model, &spaces)?;
    let mut masks: Vec<PruneMask> = spaces.iter().map(|s| s.mask_from_model(model)).collect();

    let saved: Vec<bool> = model.params().map(|(_, _, p)| p.trainable).collect();
    if cfg.freeze_others && !spaces.is_empty() {
        let owned: HashSet<(usize, crate::nn::ParamRole)> = spaces
            .iter()
            .flat_map(|s| s.touched(model))
            .map(|id| (id.layer_index, id.role))
            .collect();
        for (li, role, p) in model.params_mut() {
            if !owned.contains(&(li, role)) {
                p.trainable = false;
            }
        }
    }

    let mut noop = |_: &Model<f32>, _: &EpochRecord, _: &[PruneSpace], _: &[PruneMask]| {};
    let observer: &mut EpochObserver<'_> = match observer {
        Some(o) => o,
        None => &mut noop,
    };
    let mut records = Vec::new();
    let mut history = Vec::new();
    let mut epoch = first_epoch;
    let result = (|| -> Result<()> {
        for e in 1..=cfg.epochs {
            let lr = cfg.lr.lr_at_epoch(e, cfg.epochs);
            let loss = train_epoch(model, opt, data.train, settings, epoch, lr)?;
            for (s, space) in spaces.iter().enumerate() {
                let sch = &space.schedule;
                if e > sch.niter || !sch.is_prune_epoch(e) {
                    continue;
                }
                let target = sch.value(e, space.len(), masks[s].support_size())?;
                masks[s] = prune_event(model, space, &masks[s], target, cfg.resurrect)?;
                if cfg.resurrect && e == sch.niter {
                    freeze_killed(model, space, &masks[s]);
                }
            }
            if !spaces.is_empty() {
                opt.clear_frozen(model)?;
            }
            history.push(masks.clone());
            let rec = record(model, data, &cfg.name, epoch, lr, loss, &spaces, &masks)?;
            observer(model, &rec, &spaces, &masks);
            records.push(rec);
            epoch += 1;
        }
        if cfg.resurrect {
            for (space, mask) in spaces.iter().zip(&masks) {
                freeze_killed(model, space, mask);
            }
            opt.clear_frozen(model)?;
        }
        let ft = cfg
            .finetune_lr
            .clone()
            .unwrap_or_else(|| LrStageSchedule::constant(cfg.lr.base_lr / 10.0));
        let phase = format!("{}-finetune", cfg.name);
        for f in 1..=cfg.finetune_epochs {
            let lr = ft.lr_at_epoch(f, cfg.finetune_epochs);
            let loss = train_epoch(model, opt, data.train, settings, epoch, lr)?;
            let rec = record(model, data, &phase, epoch, lr, loss, &spaces, &masks)?;
            observer(model, &rec, &spaces, &masks);
            records.push(rec);
            epoch += 1;
        }
        Ok(())
    })();
    for ((_, _, p), t) in model.params_mut().zip(saved) {
        p.trainable = t;
    }
    result?;
    Ok(PhaseOutcome {
        records,
        spaces,
        masks,
        mask_history: history,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    model: &Model<f32>,
    data: RunData<'_>,
    phase: &str,
    epoch: usize,
    lr: f64,
    train_loss: f64,
    spaces: &[PruneSpace],
    masks: &[PruneMask],
) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        phase: phase.into(),
        lr,
        train_loss,
        val_error: data.val.map(|d| model.evaluate(d)).transpose()?,
        test_error: data.test.map(|d| model.evaluate(d)).transpose()?,
        supports: spaces
            .iter()
            .zip(masks)
            .map(|(s, m)| (s.name.clone(), m.support_size()))
            .collect(),
    })
}

/// Weight-level run: every space must be a weight or neuron-group space.
pub fn dsc1_run(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    cfg: &PhaseConfig,
    data: RunData<'_>,
    settings: &TrainSettings,
    first_epoch: usize,
    observer: Option<&mut EpochObserver<'_>>,
) -> Result<PhaseOutcome> {
    if let Some(s) = cfg.spaces.iter().find(|s| s.kind == SpaceKind::Channel) {
        return Err(Error::Usage(format!(
            "weight-level run given channel space `{}`",
            s.name
        )));
    }
    run_phase(model, opt, cfg, data, settings, first_epoch, observer)
}

/// Channel-level run: every space must be a channel space and none may
/// include the first convolution.
pub fn dsc2_run(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    cfg: &PhaseConfig,
    data: RunData<'_>,
    settings: &TrainSettings,
    first_epoch: usize,
    observer: Option<&mut EpochObserver<'_>>,
) -> Result<PhaseOutcome> {
    let first_conv = model.select_layers(&LayerSelector::Conv)?.first().copied();
    for s in &cfg.spaces {
        if s.kind != SpaceKind::Channel {
            return Err(Error::Usage(format!(
                "channel-level run given non-channel space `{}`",
                s.name
            )));
        }
        let layers = model.select_layers(&s.layers)?;
        if first_conv.is_some_and(|fc| layers.contains(&fc)) {
            return Err(Error::Config(format!(
                "space `{}` includes the first convolution, which is exempt from channel pruning",
                s.name
            )));
        }
    }
    run_phase(model, opt, cfg, data, settings, first_epoch, observer)
}
