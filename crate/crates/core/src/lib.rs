//! Exemplar-free multimodal class-incremental graph learning.
//!
//! The pipeline runs a correlation-weighted graph encoder per modality, fuses
//! the modalities through entropic fused optimal transport, maps the fused
//! embeddings through a frozen Fourier-analysis feature stack, and learns new
//! classes phase by phase with a concatenated recursive least squares
//! classifier plus a residual compensation stream. No sample from an earlier
//! phase is ever stored.

pub mod linalg;
pub mod mainstream;
mod codec;
pub mod compensation;
pub mod fan;
pub mod graph;
pub mod harness;
pub mod transport;

pub use linalg::{LinalgError, Matrix};
