//! Dense row-major `f64` tensors and a tape-based reverse-mode autodiff
//! engine, together with the optimizer, finite-difference checker and
//! checkpoint format used by the rest of the workspace.

mod error;
mod kernels;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod opcases;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};
pub use kernels::{dilated_causal_conv1d, relu, softmax};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::SeedRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
