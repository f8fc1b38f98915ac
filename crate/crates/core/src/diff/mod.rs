//! Reverse-mode differentiation over dense tensors, the op set the networks
//! are built from, a finite-difference checker and the checkpoint codec.

mod attn;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod loss;
mod lstm;
mod nn;
mod params;
mod scalar;
mod tensor;

pub use graph::{BackCtx, Graph, Var};
pub use loss::{si_sdr_value, BCE_EPS, DB_CLAMP, EPS};
pub use lstm::LstmWeights;
pub use nn::SegmentGeometry;
pub use params::{InitRecord, InitScheme, ParamId, ParamStore, Parameter};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("graph error: {0}")]
    Graph(String),
}
