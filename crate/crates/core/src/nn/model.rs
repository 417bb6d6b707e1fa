use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, ParamRole};
use super::spec::{LayerDesc, ModelSpec};
use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::exec::map_indexed;
use crate::tensor::{BnMode, Param, Scalar, Tensor};

/// One scalar parameter: layer, tensor role, flat index within the tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub layer_index: usize,
    pub role: ParamRole,
    pub flat_index: usize,
}

/// One output channel of a convolution that is followed by batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelRef {
    pub layer_index: usize,
    pub channel_index: usize,
}

/// One hidden unit of a fully connected layer that feeds another one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeuronRef {
    pub layer_index: usize,
    pub unit_index: usize,
}

/// Which parameterized layers a space draws from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    /// Every convolution and fully connected layer.
    All,
    Fc,
    Conv,
    /// Every convolution except the first one.
    ConvExceptFirst,
    /// Explicit layer indices.
    Layers(Vec<usize>),
}

const EVAL_BATCH: usize = 256;

/// A layered network built from a [`ModelSpec`].
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with deterministic initialization from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers()?
            .iter()
            .map(|d| Layer::from_desc(d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn layer_descs(&self) -> Vec<LayerDesc> {
        self.layers.iter().map(Layer::desc).collect()
    }

    /// True when the layer table differs from the architecture default.
    pub fn is_compacted(&self) -> bool {
        self.spec.layers().map(|d| d != self.layer_descs()).unwrap_or(true)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(shape_err!(
                "model expects N×{:?}, got {:?}",
                self.spec.input_shape,
                x.shape()
            ));
        }
        Ok(())
    }

    /// Training-time forward pass; records activations for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        h.clear_grad();
        for layer in &mut self.layers {
            h = layer.forward(h, mode)?;
        }
        Ok(h)
    }

    /// Fills every parameter gradient from the loss gradient at the logits.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    /// Eval-mode logits; does not touch parameters, masks or caches.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        h.clear_grad();
        for layer in &self.layers {
            h = layer.infer(h)?;
        }
        Ok(h)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// `(layer, role, &param)` in registry order: layer-major, then
    /// weight, bias, γ, β.
    pub fn params(&self) -> impl Iterator<Item = (usize, ParamRole, &Param<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(r, p)| (i, r, p)))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (usize, ParamRole, &mut Param<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut().into_iter().map(move |(r, p)| (i, r, p)))
    }

    pub fn param(&self, layer: usize, role: ParamRole) -> Option<&Param<T>> {
        self.layers.get(layer)?.param(role)
    }

    pub fn param_mut(&mut self, layer: usize, role: ParamRole) -> Option<&mut Param<T>> {
        self.layers.get_mut(layer)?.param_mut(role)
    }

    pub fn value(&self, id: ParamId) -> T {
        self.param(id.layer_index, id.role)
            .expect("param id refers to a model tensor")
            .value
            .data()[id.flat_index]
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().map(|(_, _, p)| p.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, _, p) in self.params_mut() {
            p.value.zero_grad();
        }
    }

    /// Zeroes gradients of frozen entries.
    pub fn mask_grads(&mut self) {
        for (_, _, p) in self.params_mut() {
            p.mask_grad();
        }
    }

    /// Rewrites zero into every frozen entry.
    pub fn enforce_masks(&mut self) {
        for (_, _, p) in self.params_mut() {
            p.enforce();
        }
    }

    /// Short names such as `conv1` or `fc2` for parameterized layers.
    pub fn layer_names(&self) -> Vec<String> {
        let (mut conv, mut fc, mut bn) = (0, 0, 0);
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(_) => {
                    conv += 1;
                    format!("conv{conv}")
                }
                Layer::Linear(_) => {
                    fc += 1;
                    format!("fc{fc}")
                }
                Layer::BatchNorm(_) => {
                    bn += 1;
                    format!("bn{bn}")
                }
                Layer::Relu { .. } => "relu".into(),
                Layer::MaxPool2 { .. } => "pool".into(),
                Layer::Flatten { .. } => "flatten".into(),
            })
            .collect()
    }

    /// Indices of the layers a selector refers to; every named layer must
    /// be a convolution or fully connected layer.
    pub fn select_layers(&self, sel: &LayerSelector) -> Result<Vec<usize>> {
        let weighted = |i: usize| matches!(self.layers[i], Layer::Linear(_) | Layer::Conv2d(_));
        let convs: Vec<usize> = (0..self.layers.len())
            .filter(|&i| matches!(self.layers[i], Layer::Conv2d(_)))
            .collect();
        Ok(match sel {
            LayerSelector::All => (0..self.layers.len()).filter(|&i| weighted(i)).collect(),
            LayerSelector::Fc => (0..self.layers.len())
                .filter(|&i| matches!(self.layers[i], Layer::Linear(_)))
                .collect(),
            LayerSelector::Conv => convs,
            LayerSelector::ConvExceptFirst => convs.into_iter().skip(1).collect(),
            LayerSelector::Layers(ix) => {
                let mut out = ix.clone();
                out.sort_unstable();
                out.dedup();
                if out.len() != ix.len() {
                    return Err(Error::Partition(format!("layer listed twice in {ix:?}")));
                }
                for &i in &out {
                    if i >= self.layers.len() || !weighted(i) {
                        return Err(Error::Usage(format!(
                            "layer {i} is not a convolution or fully connected layer"
                        )));
                    }
                }
                out
            }
        })
    }

    /// Scalar ids of the selected layers' weights (and biases), layer-major.
    pub fn enumerate_weights(&self, sel: &LayerSelector, include_bias: bool) -> Result<Vec<ParamId>> {
        let mut ids = Vec::new();
        for li in self.select_layers(sel)? {
            for (role, p) in self.layers[li].params() {
                if role == ParamRole::Weight || (include_bias && role == ParamRole::Bias) {
                    ids.extend((0..p.numel()).map(|flat_index| ParamId {
                        layer_index: li,
                        role,
                        flat_index,
                    }));
                }
            }
        }
        Ok(ids)
    }

    /// BN-backed output channels of the selected convolutions.
    pub fn enumerate_channels(&self, sel: &LayerSelector) -> Result<Vec<ChannelRef>> {
        let mut out = Vec::new();
        for li in self.select_layers(sel)? {
            let Layer::Conv2d(conv) = &self.layers[li] else {
                return Err(Error::Config(format!(
                    "channel space includes layer {li}, which is not a convolution"
                )));
            };
            match self.layers.get(li + 1) {
                Some(Layer::BatchNorm(bn)) if bn.state.channels() == conv.out_channels() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "channel space includes convolution {li} without a following batch norm"
                    )))
                }
            }
            out.extend((0..conv.out_channels()).map(|c| ChannelRef {
                layer_index: li,
                channel_index: c,
            }));
        }
        Ok(out)
    }

    /// Hidden units of the selected fully connected layers. Group selectors
    /// skip the output layer; explicitly naming it is an error.
    pub fn enumerate_neurons(&self, sel: &LayerSelector) -> Result<Vec<NeuronRef>> {
        let explicit = matches!(sel, LayerSelector::Layers(_));
        let mut out = Vec::new();
        for li in self.select_layers(sel)? {
            let Layer::Linear(lin) = &self.layers[li] else {
                if explicit {
                    return Err(Error::Config(format!("neuron space includes non-linear layer {li}")));
                }
                continue;
            };
            if self.next_linear(li).is_none() {
                if explicit {
                    return Err(Error::Config(format!("neuron space includes output layer {li}")));
                }
                continue;
            }
            out.extend((0..lin.outputs()).map(|u| NeuronRef {
                layer_index: li,
                unit_index: u,
            }));
        }
        Ok(out)
    }

    /// The fully connected layer fed by hidden layer `li` through a ReLU.
    pub fn next_linear(&self, li: usize) -> Option<usize> {
        match (self.layers.get(li + 1), self.layers.get(li + 2)) {
            (Some(Layer::Relu { .. }), Some(Layer::Linear(_))) => Some(li + 2),
            _ => None,
        }
    }
}

impl Model<f32> {
    /// Fraction of examples whose arg-max logit (lowest index on ties)
    /// differs from the label.
    pub fn evaluate(&self, data: &Dataset) -> Result<f64> {
        let n = data.len();
        if n == 0 {
            return Err(Error::Input("cannot evaluate on an empty dataset".into()));
        }
        let batches = n.div_ceil(EVAL_BATCH);
        let wrong = map_indexed(batches, |b| -> Result<usize> {
            let idx: Vec<usize> = (b * EVAL_BATCH..((b + 1) * EVAL_BATCH).min(n)).collect();
            let (x, y) = data.batch(&idx);
            let logits = self.predict(&x)?;
            Ok(argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p != t).count())
        })
        .into_iter()
        .sum::<Result<usize>>()?;
        Ok(wrong as f64 / n as f64)
    }
}

/// Arg-max per row, ties toward the lower index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.row_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
