//! Dense and sparse numerics with hand-written reverse-mode gradients.

mod checkpoint;
mod gradcheck;
mod matrix;
pub mod ops;
mod params;
mod sparse;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ProbeResult};
pub use matrix::{dot, Matrix};
pub use params::{
    adam_step, glorot_bound, glorot_uniform, AdamConfig, GradientSet, Parameter, ParameterStore,
};
pub use sparse::SparseMatrix;
