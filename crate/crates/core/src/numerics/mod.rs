//! Dense tensors, reverse-mode differentiation, finite-difference gradient
//! checking and Adam.
//!
//! All values are `f64`. Gradient checks need the precision, and the model
//! is small enough that single precision buys little.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, relative_error, BlockReport, GradCheckOptions, GradCheckReport};
pub use kernels::{layer_norm, softmax};
pub use params::{BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
