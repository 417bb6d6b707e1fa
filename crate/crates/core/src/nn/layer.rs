use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::LayerDesc;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_eval, batchnorm_forward, conv2d_backward, conv2d_forward, linear_backward,
    linear_forward, maxpool2_backward, maxpool2_forward, relu, relu_backward, BnCache, BnMode, BnState, Param, Scalar,
    Tensor,
};

/// Which tensor of a layer a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::BnGamma => "bn_gamma",
            ParamRole::BnBeta => "bn_beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "weight" => ParamRole::Weight,
            "bias" => ParamRole::Bias,
            "bn_gamma" => ParamRole::BnGamma,
            "bn_beta" => ParamRole::BnBeta,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// `outputs × inputs`
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    /// `C_out × C_in × k × k`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub state: BnState<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Linear(Linear<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu {
        input: Option<Tensor<T>>,
    },
    MaxPool2 {
        input_shape: Vec<usize>,
        argmax: Option<Vec<usize>>,
    },
    Flatten {
        input_shape: Option<Vec<usize>>,
    },
}

fn uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

fn missing_cache(kind: &str) -> Error {
    Error::State(format!("{kind} backward called without a recorded forward pass"))
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[out, _] = weight.shape() else {
            return Err(shape_err!("linear weight must be rank 2"));
        };
        if bias.numel() != out {
            return Err(shape_err!("linear bias length {} != {}", bias.numel(), out));
        }
        Ok(Linear {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, stride: usize, pad: usize) -> Result<Self> {
        if weight.shape().len() != 4 || weight.shape()[2] != weight.shape()[3] {
            return Err(shape_err!(
                "conv kernels must be C_out×C_in×k×k, got {:?}",
                weight.shape()
            ));
        }
        if let Some(b) = &bias {
            if b.numel() != weight.shape()[0] {
                return Err(shape_err!("conv bias length {} != {}", b.numel(), weight.shape()[0]));
            }
        }
        Ok(Conv2d {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            stride,
            pad,
            input: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    /// Weights of one output channel, `C_in × k × k` values.
    pub fn filter_len(&self) -> usize {
        self.weight.numel() / self.out_channels()
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(state: BnState<T>) -> Self {
        BatchNorm { state, cache: None }
    }
}

impl<T: Scalar> Layer<T> {
    /// Fresh layer with fan-in uniform weights, zero biases, `γ = 1`, `β = 0`.
    pub fn from_desc(desc: &LayerDesc, rng: &mut impl Rng) -> Result<Self> {
        Ok(match *desc {
            LayerDesc::Linear { inputs, outputs } => Layer::Linear(Linear::new(
                uniform(&[outputs, inputs], inputs, rng),
                Tensor::zeros(&[outputs]),
            )?),
            LayerDesc::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                bias,
            } => Layer::Conv2d(Conv2d::new(
                uniform(
                    &[out_channels, in_channels, kernel, kernel],
                    in_channels * kernel * kernel,
                    rng,
                ),
                bias.then(|| Tensor::zeros(&[out_channels])),
                stride,
                pad,
            )?),
            LayerDesc::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(BnState::new(channels))),
            LayerDesc::Relu => Layer::Relu { input: None },
            LayerDesc::MaxPool2 => Layer::MaxPool2 {
                input_shape: Vec::new(),
                argmax: None,
            },
            LayerDesc::Flatten => Layer::Flatten { input_shape: None },
        })
    }

    /// Structural description of the layer as it currently is.
    pub fn desc(&self) -> LayerDesc {
        match self {
            Layer::Linear(l) => LayerDesc::Linear {
                inputs: l.inputs(),
                outputs: l.outputs(),
            },
            Layer::Conv2d(c) => LayerDesc::Conv2d {
                in_channels: c.in_channels(),
                out_channels: c.out_channels(),
                kernel: c.kernel(),
                stride: c.stride,
                pad: c.pad,
                bias: c.bias.is_some(),
            },
            Layer::BatchNorm(b) => LayerDesc::BatchNorm {
                channels: b.state.channels(),
            },
            Layer::Relu { .. } => LayerDesc::Relu,
            Layer::MaxPool2 { .. } => LayerDesc::MaxPool2,
            Layer::Flatten { .. } => LayerDesc::Flatten,
        }
    }

    /// Trainable tensors in registry order.
    pub fn params(&self) -> Vec<(ParamRole, &Param<T>)> {
        match self {
            Layer::Linear(l) => vec![(ParamRole::Weight, &l.weight), (ParamRole::Bias, &l.bias)],
            Layer::Conv2d(c) => {
                let mut v = vec![(ParamRole::Weight, &c.weight)];
                if let Some(b) = &c.bias {
                    v.push((ParamRole::Bias, b));
                }
                v
            }
            Layer::BatchNorm(b) => vec![(ParamRole::BnGamma, &b.state.gamma), (ParamRole::BnBeta, &b.state.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(ParamRole, &mut Param<T>)> {
        match self {
            Layer::Linear(l) => vec![(ParamRole::Weight, &mut l.weight), (ParamRole::Bias, &mut l.bias)],
            Layer::Conv2d(c) => {
                let mut v = vec![(ParamRole::Weight, &mut c.weight)];
                if let Some(b) = &mut c.bias {
                    v.push((ParamRole::Bias, b));
                }
                v
            }
            Layer::BatchNorm(b) => vec![
                (ParamRole::BnGamma, &mut b.state.gamma),
                (ParamRole::BnBeta, &mut b.state.beta),
            ],
            _ => Vec::new(),
        }
    }

    pub fn param(&self, role: ParamRole) -> Option<&Param<T>> {
        self.params().into_iter().find(|(r, _)| *r == role).map(|(_, p)| p)
    }

    pub fn param_mut(&mut self, role: ParamRole) -> Option<&mut Param<T>> {
        self.params_mut().into_iter().find(|(r, _)| *r == role).map(|(_, p)| p)
    }

    /// Forward pass that records what backward needs.
    pub fn forward(&mut self, x: Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        match self {
            Layer::Linear(l) => {
                let y = linear_forward(&x, &l.weight.value, &l.bias.value)?;
                l.input = Some(x);
                Ok(y)
            }
            Layer::Conv2d(c) => {
                let y = conv2d_forward(&x, &c.weight.value, c.bias.as_ref().map(|b| &b.value), c.stride, c.pad)?;
                c.input = Some(x);
                Ok(y)
            }
            Layer::BatchNorm(b) => {
                let (y, cache) = batchnorm_forward(&x, &mut b.state, mode)?;
                b.cache = Some(cache);
                Ok(y)
            }
            Layer::Relu { input } => {
                let y = relu(&x);
                *input = Some(x);
                Ok(y)
            }
            Layer::MaxPool2 { input_shape, argmax } => {
                let (y, arg) = maxpool2_forward(&x)?;
                *input_shape = x.shape().to_vec();
                *argmax = Some(arg);
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                let n = x.leading();
                let d = x.row_len();
                x.reshape(&[n, d])
            }
        }
    }

    /// Eval-mode forward without recording anything.
    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Linear(l) => linear_forward(&x, &l.weight.value, &l.bias.value),
            Layer::Conv2d(c) => conv2d_forward(&x, &c.weight.value, c.bias.as_ref().map(|b| &b.value), c.stride, c.pad),
            Layer::BatchNorm(b) => batchnorm_eval(&x, &b.state),
            Layer::Relu { .. } => Ok(relu(&x)),
            Layer::MaxPool2 { .. } => Ok(maxpool2_forward(&x)?.0),
            Layer::Flatten { .. } => {
                let n = x.leading();
                let d = x.row_len();
                x.reshape(&[n, d])
            }
        }
    }

    /// Consumes the recorded forward state, writes parameter gradients and
    /// returns the gradient with respect to the layer input.
    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Linear(l) => {
                let x = l.input.take().ok_or_else(|| missing_cache("linear"))?;
                let (dx, dw, db) = linear_backward(&x, &l.weight.value, &dy)?;
                l.weight.value.grad_mut().copy_from_slice(dw.data());
                l.bias.value.grad_mut().copy_from_slice(db.data());
                Ok(dx)
            }
            Layer::Conv2d(c) => {
                let x = c.input.take().ok_or_else(|| missing_cache("conv2d"))?;
                let g = conv2d_backward(&x, &c.weight.value, &dy, c.stride, c.pad)?;
                c.weight.value.grad_mut().copy_from_slice(g.kernels.data());
                if let Some(b) = &mut c.bias {
                    b.value.grad_mut().copy_from_slice(g.bias.data());
                }
                Ok(g.input)
            }
            Layer::BatchNorm(b) => {
                let cache = b.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
                let (dx, dg, dbeta) = batchnorm_backward(&dy, &cache, &b.state)?;
                b.state.gamma.value.grad_mut().copy_from_slice(dg.data());
                b.state.beta.value.grad_mut().copy_from_slice(dbeta.data());
                Ok(dx)
            }
            Layer::Relu { input } => {
                let x = input.take().ok_or_else(|| missing_cache("relu"))?;
                relu_backward(&x, &dy)
            }
            Layer::MaxPool2 { input_shape, argmax } => {
                let arg = argmax.take().ok_or_else(|| missing_cache("maxpool"))?;
                maxpool2_backward(input_shape, &arg, &dy)
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.take().ok_or_else(|| missing_cache("flatten"))?;
                dy.reshape(&shape)
            }
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Linear(l) => l.input = None,
            Layer::Conv2d(c) => c.input = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Relu { input } => *input = None,
            Layer::MaxPool2 { argmax, .. } => *argmax = None,
            Layer::Flatten { input_shape } => *input_shape = None,
        }
    }
}
