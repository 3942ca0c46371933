//! Hybrid decoder/MLP language models with paired weight sharing.
//!
//! A model is a stack of full decoder blocks (norm → causal grouped-query
//! attention → residual → norm → gated MLP → residual) followed by
//! attention-free MLP blocks whose weights are shared by adjacent pairs.
//! Alongside the model this crate ships the instruments used to justify that
//! design: a least-squares linearity probe around each attention sub-block,
//! an RMSNorm scale-invariance check, Earth Mover's Distance scores over MLP
//! weight distributions, a training loop, and a latency/memory harness.
//!
//! The guide under `book/` walks through each piece; its code snippets are
//! compiled and run as doctests of this crate.

pub mod bench;
pub mod emd;
pub mod error;
pub mod model;
pub mod probe;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelWeights};
pub use tensor::{DType, Float, RngState, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/architecture.md")]
    pub mod architecture {}
    #[doc = include_str!("../../../book/src/probe.md")]
    pub mod probe {}
    #[doc = include_str!("../../../book/src/rmsnorm.md")]
    pub mod rmsnorm {}
    #[doc = include_str!("../../../book/src/emd.md")]
    pub mod emd {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    pub mod benchmarking {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
