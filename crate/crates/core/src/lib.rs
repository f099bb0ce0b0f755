//! Dimensionality reduction of pre-extracted feature vectors by training a
//! small encoder on nearest-neighbor pairs with the Barlow Twins
//! redundancy-reduction loss, together with the usual baselines (whitened
//! PCA, MSE reconstruction, contrastive, Gaussian-noise pairs), retrieval
//! metrics and product quantization.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod knn;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod pca;
pub mod quantizer;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
