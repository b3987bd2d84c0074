//! Minimal reverse-mode autodiff over `f64` tensors and the layers the
//! models are built from.

mod graph;
pub mod gradcheck;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{CustomOp, Gradients, Graph, Var};
pub use layers::{attention, attention_parts, dropout, BiLstm, Linear, Lstm};
pub use optim::AdamState;
pub use params::{ParamId, ParamRecord, ParamStore, Parameter};
pub use tensor::Tensor;
