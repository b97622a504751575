//! Quantum information potential field (QIPF) uncertainty for pixel
//! classifiers, with the softmax, MC-dropout and ensemble baselines and
//! patch-level PA / PU / PAvPU evaluation.
//!
//! The pieces, bottom up:
//!
//! - [`kde`]: Gaussian information potential with gradient and Laplacian,
//!   Silverman bandwidth, subsampling.
//! - [`qipf`]: Hermite moment decomposition of the potential and the
//!   argmax uncertainty index.
//! - [`toymodel`]: synthetic scenes and a small MLP pixel classifier.
//! - [`baselines`]: softmax, MC-dropout and ensemble uncertainty maps.
//! - [`metrics`]: patch reduction, confusion counts and threshold sweeps.
//! - [`pipeline`]: configuration, end-to-end runs, files and benchmark.

pub mod baselines;
pub mod error;
pub mod kde;
pub mod metrics;
pub mod pipeline;
pub mod qipf;
pub mod seed;
pub mod toymodel;

pub use error::{Error, Result};
