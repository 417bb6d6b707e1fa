use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

/// The architectures the experiments use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One hidden ReLU layer with a 2-way output.
    MlpParity,
    /// 784-300-100-10 fully connected.
    #[serde(rename = "lenet_300_100")]
    Lenet300100,
    /// conv 20@5×5, pool, conv 50@5×5, pool, fc 800-500-10.
    #[serde(rename = "lenet_5")]
    Lenet5,
    /// conv→BN→ReLU blocks `[32,32] pool [64,64] pool [128,128] pool`, fc 256, fc classes.
    SmallVggBn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::MlpParity => "mlp_parity",
            Architecture::Lenet300100 => "lenet_300_100",
            Architecture::Lenet5 => "lenet_5",
            Architecture::SmallVggBn => "small_vgg_bn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp_parity" => Architecture::MlpParity,
            "lenet_300_100" => Architecture::Lenet300100,
            "lenet_5" => Architecture::Lenet5,
            "small_vgg_bn" => Architecture::SmallVggBn,
            other => return Err(Error::Spec(format!("unknown architecture `{other}`"))),
        })
    }
}

/// Structural description of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerDesc {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
}

/// A buildable model description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Per-example input shape, e.g. `[1, 28, 28]` or `[50]`.
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    /// Hidden width, used by `mlp_parity` only.
    pub hidden: usize,
}

impl ModelSpec {
    pub fn mlp_parity(input_dim: usize, hidden: usize) -> Self {
        ModelSpec {
            architecture: Architecture::MlpParity,
            input_shape: vec![input_dim],
            class_count: 2,
            hidden,
        }
    }

    pub fn lenet_300_100() -> Self {
        ModelSpec {
            architecture: Architecture::Lenet300100,
            input_shape: vec![1, 28, 28],
            class_count: 10,
            hidden: 0,
        }
    }

    pub fn lenet_5() -> Self {
        ModelSpec {
            architecture: Architecture::Lenet5,
            input_shape: vec![1, 28, 28],
            class_count: 10,
            hidden: 0,
        }
    }

    pub fn small_vgg_bn(class_count: usize) -> Self {
        ModelSpec {
            architecture: Architecture::SmallVggBn,
            input_shape: vec![3, 32, 32],
            class_count,
            hidden: 0,
        }
    }

    /// Layer table for this spec, validated against the input shape.
    pub fn layers(&self) -> Result<Vec<LayerDesc>> {
        use LayerDesc::*;
        let k = self.class_count;
        if k < 2 {
            return Err(Error::Spec(format!("class_count must be ≥ 2, got {k}")));
        }
        let layers = match self.architecture {
            Architecture::MlpParity => {
                let &[d] = self.input_shape.as_slice() else {
                    return Err(Error::Spec("mlp_parity input must be a vector".into()));
                };
                if self.hidden == 0 {
                    return Err(Error::Spec("mlp_parity needs hidden ≥ 1".into()));
                }
                vec![
                    Linear {
                        inputs: d,
                        outputs: self.hidden,
                    },
                    Relu,
                    Linear {
                        inputs: self.hidden,
                        outputs: k,
                    },
                ]
            }
            Architecture::Lenet300100 => {
                let d: usize = self.input_shape.iter().product();
                vec![
                    Flatten,
                    Linear {
                        inputs: d,
                        outputs: 300,
                    },
                    Relu,
                    Linear {
                        inputs: 300,
                        outputs: 100,
                    },
                    Relu,
                    Linear {
                        inputs: 100,
                        outputs: k,
                    },
                ]
            }
            Architecture::Lenet5 => {
                let &[c, h, w] = self.input_shape.as_slice() else {
                    return Err(Error::Spec("lenet_5 input must be C×H×W".into()));
                };
                let h1 = conv_output_extent(h, 5, 1, 0)? / 2;
                let w1 = conv_output_extent(w, 5, 1, 0)? / 2;
                let h2 = conv_output_extent(h1, 5, 1, 0)? / 2;
                let w2 = conv_output_extent(w1, 5, 1, 0)? / 2;
                vec![
                    Conv2d {
                        in_channels: c,
                        out_channels: 20,
                        kernel: 5,
                        stride: 1,
                        pad: 0,
                        bias: true,
                    },
                    Relu,
                    MaxPool2,
                    Conv2d {
                        in_channels: 20,
                        out_channels: 50,
                        kernel: 5,
                        stride: 1,
                        pad: 0,
                        bias: true,
                    },
                    Relu,
                    MaxPool2,
                    Flatten,
                    Linear {
                        inputs: 50 * h2 * w2,
                        outputs: 500,
                    },
                    Relu,
                    Linear {
                        inputs: 500,
                        outputs: k,
                    },
                ]
            }
            Architecture::SmallVggBn => {
                let &[c, h, w] = self.input_shape.as_slice() else {
                    return Err(Error::Spec("small_vgg_bn input must be C×H×W".into()));
                };
                if h % 8 != 0 || w % 8 != 0 {
                    return Err(Error::Spec("small_vgg_bn needs spatial extents divisible by 8".into()));
                }
                let mut layers = Vec::new();
                let mut cin = c;
                for width in [32, 64, 128] {
                    for _ in 0..2 {
                        layers.push(Conv2d {
                            in_channels: cin,
                            out_channels: width,
                            kernel: 3,
                            stride: 1,
                            pad: 1,
                            bias: false,
                        });
                        layers.push(BatchNorm { channels: width });
                        layers.push(Relu);
                        cin = width;
                    }
                    layers.push(MaxPool2);
                }
                layers.push(Flatten);
                layers.push(Linear {
                    inputs: 128 * (h / 8) * (w / 8),
                    outputs: 256,
                });
                layers.push(Relu);
                layers.push(Linear {
                    inputs: 256,
                    outputs: k,
                });
                layers
            }
        };
        Ok(layers)
    }
}
