//! JetFormer jet tagger with its compression toolchain: multi-objective
//! architecture search, dependency-aware structured pruning and 1-bit
//! quantization-aware training.

pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub mod model;
pub mod quantization;
pub mod cost;
pub mod data;
pub mod training;
pub mod pruning;
pub mod hpo;
