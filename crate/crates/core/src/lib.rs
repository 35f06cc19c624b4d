//! Spectral-spatial MLP-mixer network for hyperspectral image classification.

pub mod cli;
pub mod complexity;
pub mod error;
pub mod hsi;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, Tensor, Var};
