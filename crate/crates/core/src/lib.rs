//! Incomplete multi-view contrastive clustering.
//!
//! Each view is encoded by its own autoencoder. The leading `d0` coordinates
//! of every latent vector (the sub-vector) are trained with a spectral
//! contrastive loss across views, the full latent is trained for
//! reconstruction, and small predictor networks learn to map one view's
//! latent onto another's so that missing views can be imputed before
//! k-means clustering.
//!
//! Module map:
//! - [`data`]: datasets, normalization, observation masks, synthetic data
//! - [`nn`]: dense layers, manual backprop, Adam, gradient checking
//! - [`model`]: per-view networks and the three training losses
//! - [`recover`]: latent imputation and view fusion
//! - [`cluster`]: seeded k-means++ / Lloyd
//! - [`metrics`]: ACC, NMI, ARI and the assignment solver
//! - [`diagnostics`]: singular spectra, effective rank, convergence traces
//! - [`train`]: two-stage training and the end-to-end pipeline
//! - [`cli`]: the `imvc` command-line tool

pub mod cli;
pub mod cluster;
pub mod data;
pub mod diagnostics;
mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod recover;
pub mod train;

pub use error::{Error, Result};
