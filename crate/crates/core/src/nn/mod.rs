//! Deterministic dense layers with explicit backward passes.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

use thiserror::Error;

pub use graph::{Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}
