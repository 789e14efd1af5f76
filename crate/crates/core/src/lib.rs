//! Convolutional-network training and evaluation engine for crop-disease
//! classification, with the data pipeline, leaf segmentation, metrics, and the
//! experiment-matrix harness built on top of it.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod imaging;
pub mod layers;
pub mod network;
pub mod optimizer;
pub mod segmentation;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Architecture, Checkpoint, InitPolicy, NetworkGraph};
pub use tensor::{matmul, Scalar, Tensor, Window};
