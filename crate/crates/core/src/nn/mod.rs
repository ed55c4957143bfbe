//! Minimal dense-tensor numeric core: a reverse-mode tape, transformer
//! kernels and parameter storage. Everything is `f64`.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use kernels::{
    attention, attention_values, dropout, layer_norm, multi_head_attention, positional_encoding,
    AttentionMask, MhaVars, LAYER_NORM_EPS,
};
pub use params::{Bound, LayerNormParams, Linear, NamedParam, ParamId, ParamStore};
pub use tape::{logcosh, relu, sigmoid, swish, Gradients, Tape, Var};
pub use tensor::Tensor;
