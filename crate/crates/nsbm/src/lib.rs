//! Community-based graph learning built around a neural stochastic block model.
//!
//! The crate couples a soft community-membership layer with a sequence-based
//! graph embedder and trains both against a joint loss (block-model likelihood,
//! membership entropy, link prediction, optional labels). Two task heads sit on
//! top of the shared core: graph alignment and correlated-anomaly detection.
//! A classic hard-label stochastic block model and a power-iteration PCA
//! detector are included as exact baselines/oracles, plus synthetic benchmark
//! generators and evaluation metrics.

pub mod alignment;
pub mod anomaly;
pub mod checkpoint;
pub mod classic_sbm;
pub mod community;
pub mod datagen;
pub mod embedder;
pub mod framework;
pub mod graph;
pub mod knn;
pub mod metrics;
pub mod numerics;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI's exit-code classes:
/// `Usage` -> 1, `Parse`/`Data` -> 2, `Shape`/`Numeric` -> 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
