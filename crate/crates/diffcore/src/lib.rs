//! Dense tensors with tape-based reverse-mode differentiation, a finite
//! difference gradient checker, Adam, and a flat checkpoint format.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type for callers that do not care.

pub mod adam;
pub mod cases;
pub mod checkpoint;
pub mod error;
pub mod grad_check;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{DiffError, Result};
pub use grad_check::grad_check;
pub use scalar::{sum, Scalar};
pub use tape::{BatchStats, Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type AdamState64 = AdamState<f64>;
