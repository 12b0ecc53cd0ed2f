//! Dense tensors, a reverse-mode tape, Adam, and finite-difference checking.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub(crate) mod kernels;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{bilinear_taps, population_std, trilinear_taps, Gradients, Graph, Var};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;
