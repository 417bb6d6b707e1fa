use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::schedule::AnnealSchedule;
use crate::error::{Error, Result};
use crate::nn::{ChannelRef, Layer, LayerSelector, Model, NeuronRef, ParamId, ParamRole};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Individual scalars, ranked by magnitude.
    Weight,
    /// Conv output channels with batch norm, ranked by the γ / filter-norm mix.
    Channel,
    /// Hidden fully connected units, ranked by the incoming-row norm.
    Neuron,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetricKind {
    WeightMagnitude,
    ChannelCombined,
    NeuronNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetric {
    pub kind: RankMetricKind,
    pub alpha: Option<f64>,
}

impl RankMetric {
    pub fn for_space(kind: SpaceKind, alpha: Option<f64>) -> Result<Self> {
        let metric = match kind {
            SpaceKind::Weight => RankMetricKind::WeightMagnitude,
            SpaceKind::Channel => RankMetricKind::ChannelCombined,
            SpaceKind::Neuron => RankMetricKind::NeuronNorm,
        };
        match (metric, alpha) {
            (RankMetricKind::ChannelCombined, Some(a)) if (0.0..=1.0).contains(&a) => {}
            (RankMetricKind::ChannelCombined, _) => {
                return Err(Error::Config(format!(
                    "channel spaces need alpha in [0, 1], got {alpha:?}"
                )))
            }
            (_, Some(_)) => return Err(Error::Config("alpha only applies to channel spaces".into())),
            _ => {}
        }
        Ok(RankMetric { kind: metric, alpha })
    }
}

fn default_true() -> bool {
    true
}

/// Declarative description of one pruning space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub name: String,
    pub kind: SpaceKind,
    pub layers: LayerSelector,
    /// Weight spaces only: include biases alongside weights.
    #[serde(default = "default_true")]
    pub include_bias: bool,
    pub schedule: AnnealSchedule,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Members {
    Weights(Vec<ParamId>),
    Channels(Vec<ChannelRef>),
    Neurons(Vec<NeuronRef>),
}

impl Members {
    pub fn len(&self) -> usize {
        match self {
            Members::Weights(v) => v.len(),
            Members::Channels(v) => v.len(),
            Members::Neurons(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> SpaceKind {
        match self {
            Members::Weights(_) => SpaceKind::Weight,
            Members::Channels(_) => SpaceKind::Channel,
            Members::Neurons(_) => SpaceKind::Neuron,
        }
    }
}

/// Keep flags per member, in member order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    keep: Vec<bool>,
    support: usize,
}

impl PruneMask {
    pub fn full(n: usize) -> Self {
        PruneMask {
            keep: vec![true; n],
            support: n,
        }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        let support = keep.iter().filter(|&&k| k).count();
        PruneMask { keep, support }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn support_size(&self) -> usize {
        self.support
    }

    pub fn kept(&self, i: usize) -> bool {
        self.keep[i]
    }
}

/// A resolved space over a concrete model.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSpace {
    pub name: String,
    pub members: Members,
    pub schedule: AnnealSchedule,
    pub metric: RankMetric,
}

impl PruneSpace {
    pub fn build<T: Scalar>(model: &Model<T>, cfg: &SpaceConfig) -> Result<Self> {
        let metric = RankMetric::for_space(cfg.kind, cfg.alpha)?;
        let members = match cfg.kind {
            SpaceKind::Weight => Members::Weights(model.enumerate_weights(&cfg.layers, cfg.include_bias)?),
            SpaceKind::Channel => Members::Channels(model.enumerate_channels(&cfg.layers)?),
            SpaceKind::Neuron => Members::Neurons(model.enumerate_neurons(&cfg.layers)?),
        };
        if members.is_empty() {
            return Err(Error::Config(format!("space `{}` selects no members", cfg.name)));
        }
        cfg.schedule.validate(members.len()).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("space `{}`: {m}", cfg.name)),
            other => other,
        })?;
        Ok(PruneSpace {
            name: cfg.name.clone(),
            members,
            schedule: cfg.schedule.clone(),
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn kind(&self) -> SpaceKind {
        self.members.kind()
    }

    /// The scalars a kill of member `i` zeroes.
    pub fn member_scalars<T: Scalar>(&self, model: &Model<T>, i: usize) -> Vec<ParamId> {
        member_scalars(model, &self.members, i)
    }

    /// Every scalar a kill of each member would zero, flattened.
    pub fn touched<T: Scalar>(&self, model: &Model<T>) -> Vec<ParamId> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            out.extend(member_scalars(model, &self.members, i));
        }
        out
    }

    /// Reconstructs the mask from the model's frozen flags: a member is
    /// dead when every scalar it owns is frozen.
    pub fn mask_from_model<T: Scalar>(&self, model: &Model<T>) -> PruneMask {
        PruneMask::from_keep(
            (0..self.len())
                .map(|i| {
                    !member_scalars(model, &self.members, i).iter().all(|id| {
                        model
                            .param(id.layer_index, id.role)
                            .is_some_and(|p| p.is_frozen(id.flat_index))
                    })
                })
                .collect(),
        )
    }

    /// Scores for members flagged in `eligible`, in member order.
    pub fn scores<T: Scalar>(&self, model: &Model<T>, eligible: &[bool]) -> Result<Vec<(usize, f64)>> {
        match &self.members {
            Members::Weights(ids) => Ok(rank_weights(model, ids, eligible)),
            Members::Channels(chs) => {
                let alpha = self
                    .metric
                    .alpha
                    .ok_or_else(|| Error::Usage("channel metric without alpha".into()))?;
                rank_channels(model, chs, eligible, alpha)
            }
            Members::Neurons(ns) => rank_neurons(model, ns, eligible),
        }
    }
}

/// Fails with a partition error when any two spaces share a scalar.
pub fn check_disjoint<T: Scalar>(model: &Model<T>, spaces: &[PruneSpace]) -> Result<()> {
    let mut owner: HashMap<ParamId, usize> = HashMap::new();
    for (s, space) in spaces.iter().enumerate() {
        for id in space.touched(model) {
            match owner.insert(id, s) {
                Some(o) if o != s => {
                    return Err(Error::Partition(format!(
                        "spaces `{}` and `{}` overlap at layer {} {} index {}",
                        spaces[o].name,
                        space.name,
                        id.layer_index,
                        id.role.name(),
                        id.flat_index
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn ids(layer_index: usize, role: ParamRole, range: impl Iterator<Item = usize>) -> impl Iterator<Item = ParamId> {
    range.map(move |flat_index| ParamId {
        layer_index,
        role,
        flat_index,
    })
}

/// Scalars zeroed and frozen when member `i` is killed.
fn member_scalars<T: Scalar>(model: &Model<T>, members: &Members, i: usize) -> Vec<ParamId> {
    match members {
        Members::Weights(v) => vec![v[i]],
        Members::Channels(v) => {
            let ChannelRef {
                layer_index: li,
                channel_index: c,
            } = v[i];
            let Layer::Conv2d(conv) = &model.layers[li] else {
                return Vec::new();
            };
            let fl = conv.filter_len();
            let mut out: Vec<ParamId> = ids(li, ParamRole::Weight, c * fl..(c + 1) * fl).collect();
            if conv.bias.is_some() {
                out.extend(ids(li, ParamRole::Bias, c..c + 1));
            }
            out.extend(ids(li + 1, ParamRole::BnGamma, c..c + 1));
            out.extend(ids(li + 1, ParamRole::BnBeta, c..c + 1));
            out
        }
        Members::Neurons(v) => {
            let NeuronRef {
                layer_index: li,
                unit_index: u,
            } = v[i];
            let Layer::Linear(lin) = &model.layers[li] else {
                return Vec::new();
            };
            let d = lin.inputs();
            let mut out: Vec<ParamId> = ids(li, ParamRole::Weight, u * d..(u + 1) * d).collect();
            out.extend(ids(li, ParamRole::Bias, u..u + 1));
            if let Some(next) = model.next_linear(li) {
                if let Layer::Linear(nl) = &model.layers[next] {
                    let h = nl.inputs();
                    out.extend(ids(next, ParamRole::Weight, (0..nl.outputs()).map(|r| r * h + u)));
                }
            }
            out
        }
    }
}

/// `|w|` for each eligible member.
pub fn rank_weights<T: Scalar>(model: &Model<T>, members: &[ParamId], eligible: &[bool]) -> Vec<(usize, f64)> {
    members
        .iter()
        .enumerate()
        .filter(|(i, _)| eligible[*i])
        .map(|(i, &id)| (i, model.value(id).to_f64().unwrap_or(0.0).abs()))
        .collect()
}

fn slice_norm<T: Scalar>(s: impl Iterator<Item = T>) -> f64 {
    let (mut l1, mut sq) = (0.0f64, 0.0f64);
    for v in s {
        let v = v.to_f64().unwrap_or(0.0);
        l1 += v.abs();
        sq += v * v;
    }
    (l1 + sq.sqrt()) / 2.0
}

fn normalize(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    for v in values.iter_mut() {
        *v = if max > 0.0 { *v / max } else { 0.0 };
    }
}

/// `α·|γ|/max|γ| + (1 − α)·R_L/max R_L` with `R_L = (‖C‖₁ + ‖C‖₂)/2` over
/// the filter slice; maxima taken over the eligible members.
pub fn rank_channels<T: Scalar>(
    model: &Model<T>,
    members: &[ChannelRef],
    eligible: &[bool],
    alpha: f64,
) -> Result<Vec<(usize, f64)>> {
    let mut idx = Vec::new();
    let mut rb = Vec::new();
    let mut rl = Vec::new();
    for (i, ch) in members.iter().enumerate().filter(|(i, _)| eligible[*i]) {
        let (Some(Layer::Conv2d(conv)), Some(Layer::BatchNorm(bn))) =
            (model.layers.get(ch.layer_index), model.layers.get(ch.layer_index + 1))
        else {
            return Err(Error::Usage(format!(
                "layer {} is not a convolution followed by batch norm",
                ch.layer_index
            )));
        };
        let fl = conv.filter_len();
        let c = ch.channel_index;
        idx.push(i);
        rb.push(bn.state.gamma.value.data()[c].to_f64().unwrap_or(0.0).abs());
        rl.push(slice_norm(
            conv.weight.value.data()[c * fl..(c + 1) * fl].iter().copied(),
        ));
    }
    normalize(&mut rb);
    normalize(&mut rl);
    Ok(idx
        .into_iter()
        .zip(rb.iter().zip(&rl))
        .map(|(i, (b, l))| (i, alpha * b + (1.0 - alpha) * l))
        .collect())
}

/// `R_L(in)·R_L(out)`: the `(‖·‖₁ + ‖·‖₂)/2` norm of each eligible unit's
/// incoming weight row times that of its outgoing column. The product is
/// unchanged when a ReLU unit's input is scaled by `c` and its output by
/// `1/c`; a unit feeding no further layer uses the incoming norm alone.
pub fn rank_neurons<T: Scalar>(
    model: &Model<T>,
    members: &[NeuronRef],
    eligible: &[bool],
) -> Result<Vec<(usize, f64)>> {
    members
        .iter()
        .enumerate()
        .filter(|(i, _)| eligible[*i])
        .map(|(i, n)| {
            let Some(Layer::Linear(lin)) = model.layers.get(n.layer_index) else {
                return Err(Error::Usage(format!("layer {} is not fully connected", n.layer_index)));
            };
            let (d, u) = (lin.inputs(), n.unit_index);
            let r_in = slice_norm(lin.weight.value.data()[u * d..(u + 1) * d].iter().copied());
            let r_out = match model.next_linear(n.layer_index).map(|j| &model.layers[j]) {
                Some(Layer::Linear(next)) => {
                    let (h, w) = (next.inputs(), next.weight.value.data());
                    slice_norm((0..next.outputs()).map(|r| w[r * h + u]))
                }
                _ => 1.0,
            };
            Ok((i, r_in * r_out))
        })
        .collect()
}

/// Members to keep: the `k` highest scores, equal scores resolved toward
/// the lower member index. Returned in ascending member order.
pub fn select_top(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = order.iter().take(k).map(|s| s.0).collect();
    keep.sort_unstable();
    keep
}

/// Zeroes the member's scalars; with `freeze` they are also excluded from
/// further updates.
pub fn kill_member<T: Scalar>(model: &mut Model<T>, members: &Members, i: usize, freeze: bool) {
    for id in member_scalars(model, members, i) {
        if let Some(p) = model.param_mut(id.layer_index, id.role) {
            if freeze {
                p.freeze(id.flat_index);
            } else {
                p.value.data_mut()[id.flat_index] = T::zero();
            }
        }
    }
}

/// Releases a member's freeze flags without touching values.
fn release_member<T: Scalar>(model: &mut Model<T>, members: &Members, i: usize) {
    for id in member_scalars(model, members, i) {
        if let Some(p) = model.param_mut(id.layer_index, id.role) {
            p.unfreeze(id.flat_index);
        }
    }
}

/// Keeps exactly `target` members and kills the rest.
///
/// In freeze mode only current survivors are ranked and the new keep-set is
/// a subset of the old one. With `resurrect` every member is re-ranked from
/// its current values, killed members are zeroed but stay trainable, and a
/// previously killed member may re-enter.
pub fn prune_event<T: Scalar>(
    model: &mut Model<T>,
    space: &PruneSpace,
    mask: &PruneMask,
    target: usize,
    resurrect: bool,
) -> Result<PruneMask> {
    if mask.keep.len() != space.len() {
        return Err(Error::State(format!(
            "mask for `{}` has {} entries, space has {}",
            space.name,
            mask.keep.len(),
            space.len()
        )));
    }
    if !resurrect && target > mask.support {
        return Err(Error::Schedule(format!(
            "space `{}`: target {target} exceeds support {}",
            space.name, mask.support
        )));
    }
    if target > space.len() {
        return Err(Error::Schedule(format!(
            "space `{}`: target {target} exceeds member count {}",
            space.name,
            space.len()
        )));
    }
    if !resurrect && target == mask.support {
        return Ok(mask.clone());
    }
    let eligible = if resurrect {
        vec![true; space.len()]
    } else {
        mask.keep.clone()
    };
    let scores = space.scores(model, &eligible)?;
    let mut keep = vec![false; space.len()];
    for i in select_top(&scores, target) {
        keep[i] = true;
    }
    for (i, &k) in keep.iter().enumerate() {
        if k {
            if resurrect && !mask.keep[i] {
                release_member(model, &space.members, i);
            }
        } else if mask.keep[i] || resurrect {
            kill_member(model, &space.members, i, !resurrect);
        }
    }
    Ok(PruneMask::from_keep(keep))
}

/// Freezes every member the mask marks as killed; used to pin the support
/// before fine-tuning in resurrect mode.
pub fn freeze_killed<T: Scalar>(model: &mut Model<T>, space: &PruneSpace, mask: &PruneMask) {
    for (i, &k) in mask.keep.iter().enumerate() {
        if !k {
            kill_member(model, &space.members, i, true);
        }
    }
}
