pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod partition;
pub mod simrank;
pub mod train;
pub mod transitivity;

pub use error::{Error, Result};
