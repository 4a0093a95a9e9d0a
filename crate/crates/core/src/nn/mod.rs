//! Tensor math with tape-based reverse-mode differentiation.
//!
//! Only the operations the detector needs are provided. Every op is generic
//! over [`Real`] so the same code path can be exercised in `f64` when
//! checking gradients against finite differences.

mod adam;
mod graph;
mod layers;
mod param;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{BatchStats, BnMode, CeReduction, Gradients, Graph, Var};
pub use layers::{BatchNorm, Conv1d, Linear, Lstm, LstmOutput, MhaPool};
pub use param::{init_uniform, ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};

/// SELU constants.
pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
