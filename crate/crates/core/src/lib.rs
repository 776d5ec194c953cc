//! Spatiotemporal tensor-graph forecasting engine.
//!
//! The crate covers the full pipeline: dense tensor algebra, data-driven
//! spatial and temporal graph construction, Chebyshev spectral filter stacks,
//! graph-convolutional forecasting layers with hand-written gradients, joint
//! low-rank graph compression, and the training loop that ties them together.

pub mod data;
pub mod error;
pub mod grad;
pub mod graph;
pub mod hosvd;
pub mod io;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod peps;
pub mod spectral;
pub mod svd;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use tensor::DenseTensor;
