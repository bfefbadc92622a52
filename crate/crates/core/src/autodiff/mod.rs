//! Dense tensors, a define-by-run tape, parameters and the Adam optimizer.

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use params::{ParamId, Parameter, ParameterStore};
pub use tape::{softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
