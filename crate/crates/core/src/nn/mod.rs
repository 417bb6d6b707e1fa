//! Layers, architecture descriptions and the layered model.

mod layer;
mod model;
mod spec;

pub use layer::{BatchNorm, Conv2d, Layer, Linear, ParamRole};
pub use model::{argmax_rows, ChannelRef, LayerSelector, Model, NeuronRef, ParamId};
pub use spec::{Architecture, LayerDesc, ModelSpec};
