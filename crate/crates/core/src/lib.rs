//! Claim-risk surfaces over a 2D t-SNE map of an insurance portfolio.
//!
//! Contracts are normalized, embedded with exact t-SNE, and a small network
//! learns the embedding so new contracts can be placed on the map. A second
//! network regresses claims over the plane; its smoothed, masked image is the
//! risk surface used to score and rank contracts.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod render;
pub mod surface;
pub mod tsne;

pub use error::{Error, Result};
pub use matrix::Matrix;
