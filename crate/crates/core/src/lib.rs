//! Block-wise Hadamard binarization for neural networks.
//!
//! A tensor row is cut into blocks of `β` values and approximated by
//! `δ ⊙ sign(x)`, where each block shares one scale `δ`, the mean of its
//! absolute values. `β = 1` keeps the tensor exact; `β` equal to the row
//! length gives a single scale per row.
//!
//! [`hadamard`] holds the binarization and its gradients, [`packing`] the
//! bit-packed xnor/popcount kernels, [`network`] a small training engine
//! built on them, and [`analysis`] the angle, correlation and memory studies.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod hadamard;
pub mod network;
pub mod packing;
pub mod tensor;

pub use config::RunConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use hadamard::HadaConfig;
pub use network::{Beta, LayerSpec, LeNetConfig, Network, TrainConfig};
pub use packing::{PackedHadaMatrix, PackedHadaVector};
pub use tensor::Tensor;
