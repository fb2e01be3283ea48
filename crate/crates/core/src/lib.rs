//! Rotated varied-size window attention, multi-task pretraining over
//! rotated-box-derived labels, and finetuning-schedule analytics.

pub mod analytics;
pub mod annotation;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mtp;
pub mod ops;
pub mod params;
pub mod rng;
pub mod rvsa;
pub mod suite;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use rng::Rng;
pub use tensor::Tensor;
