use crate::error::{shape_err, Result};
use crate::nn::{Layer, LayerDesc, Model};
use crate::tensor::{conv_output_extent, Scalar};

/// Per-example input shape of every layer, plus the output shape last.
pub fn layer_shapes<T: Scalar>(model: &Model<T>) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![model.spec.input_shape.clone()];
    for (i, l) in model.layers.iter().enumerate() {
        let s = &shapes[i];
        let next = match l.desc() {
            LayerDesc::Linear { inputs, outputs } => {
                if s.as_slice() != [inputs] {
                    return Err(shape_err!("layer {i}: linear expects [{inputs}], gets {s:?}"));
                }
                vec![outputs]
            }
            LayerDesc::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => {
                let &[c, h, w] = s.as_slice() else {
                    return Err(shape_err!("layer {i}: conv expects C×H×W, gets {s:?}"));
                };
                if c != in_channels {
                    return Err(shape_err!("layer {i}: conv expects {in_channels} channels, gets {c}"));
                }
                vec![
                    out_channels,
                    conv_output_extent(h, kernel, stride, pad)?,
                    conv_output_extent(w, kernel, stride, pad)?,
                ]
            }
            LayerDesc::BatchNorm { channels } => {
                if s.first() != Some(&channels) {
                    return Err(shape_err!("layer {i}: batch norm over {channels} channels, gets {s:?}"));
                }
                s.clone()
            }
            LayerDesc::Relu => s.clone(),
            LayerDesc::MaxPool2 => {
                let &[c, h, w] = s.as_slice() else {
                    return Err(shape_err!("layer {i}: pool expects C×H×W, gets {s:?}"));
                };
                vec![c, h / 2, w / 2]
            }
            LayerDesc::Flatten => vec![s.iter().product()],
        };
        shapes.push(next);
    }
    Ok(shapes)
}

/// FLOPs of each layer for one example: multiply-add counts as 2, plus one
/// per output for biases; batch norm 2 per element, ReLU and pooling 1 per
/// element, flatten free.
pub fn layer_flops<T: Scalar>(model: &Model<T>) -> Result<Vec<u64>> {
    let shapes = layer_shapes(model)?;
    Ok(model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let input: u64 = shapes[i].iter().product::<usize>() as u64;
            let output: u64 = shapes[i + 1].iter().product::<usize>() as u64;
            match l {
                Layer::Linear(lin) => 2 * lin.inputs() as u64 * lin.outputs() as u64 + lin.outputs() as u64,
                Layer::Conv2d(c) => {
                    let per_out = 2 * c.in_channels() as u64 * (c.kernel() * c.kernel()) as u64;
                    output * per_out + output
                }
                Layer::BatchNorm(_) => 2 * input,
                Layer::Relu { .. } | Layer::MaxPool2 { .. } => input,
                Layer::Flatten { .. } => 0,
            }
        })
        .collect())
}

pub fn count_flops<T: Scalar>(model: &Model<T>) -> Result<u64> {
    Ok(layer_flops(model)?.iter().sum())
}

/// `after / before`.
pub fn flops_ratio(before: u64, after: u64) -> f64 {
    if before == 0 {
        1.0
    } else {
        after as f64 / before as f64
    }
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.param_count()
}

pub fn count_nonzero<T: Scalar>(model: &Model<T>) -> usize {
    model.params().map(|(_, _, p)| p.nonzero_count()).sum()
}

/// Parameters not frozen by a pruning mask.
pub fn count_unmasked<T: Scalar>(model: &Model<T>) -> usize {
    model.params().map(|(_, _, p)| p.numel() - p.frozen_count()).sum()
}

/// One row of the per-layer cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCostRow {
    pub layer: String,
    pub role: String,
    pub params: usize,
    /// Unmasked fraction of the layer's parameters; 1 for parameter-free layers.
    pub kept_fraction: f64,
    pub flops: u64,
}

pub const REPORT_HEADER: &str = "layer,role,params,kept_fraction,flops";

impl LayerCostRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{}",
            self.layer, self.role, self.params, self.kept_fraction, self.flops
        )
    }
}

fn role(l: &LayerDesc) -> &'static str {
    match l {
        LayerDesc::Linear { .. } => "fc",
        LayerDesc::Conv2d { .. } => "conv",
        LayerDesc::BatchNorm { .. } => "bn",
        LayerDesc::Relu => "relu",
        LayerDesc::MaxPool2 => "pool",
        LayerDesc::Flatten => "flatten",
    }
}

pub fn layer_report<T: Scalar>(model: &Model<T>) -> Result<Vec<LayerCostRow>> {
    let flops = layer_flops(model)?;
    let names = model.layer_names();
    Ok(model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let params: usize = l.params().iter().map(|(_, p)| p.numel()).sum();
            let kept: usize = l.params().iter().map(|(_, p)| p.numel() - p.frozen_count()).sum();
            LayerCostRow {
                layer: names[i].clone(),
                role: role(&l.desc()).into(),
                params,
                kept_fraction: if params == 0 { 1.0 } else { kept as f64 / params as f64 },
                flops: flops[i],
            }
        })
        .collect())
}

/// Renders rows under [`REPORT_HEADER`], LF-terminated.
pub fn report_csv(rows: &[LayerCostRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Live output channels per batch-normalized convolution: a channel is
/// live unless its γ and β are both zero.
pub fn channel_counts<T: Scalar>(model: &Model<T>) -> Vec<(String, usize, usize)> {
    let names = model.layer_names();
    let mut out = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        if let (Layer::Conv2d(_), Some(Layer::BatchNorm(bn))) = (l, model.layers.get(i + 1)) {
            let g = bn.state.gamma.value.data();
            let b = bn.state.beta.value.data();
            let live = (0..g.len()).filter(|&c| g[c] != T::zero() || b[c] != T::zero()).count();
            out.push((names[i].clone(), live, g.len()));
        }
    }
    out
}
