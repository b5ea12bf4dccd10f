//! One-level and two-level K-FAC natural-gradient training for feed-forward networks.
//!
//! The two-level preconditioner adds a coarse-space correction to the usual
//! block-diagonal K-FAC inverse: each layer is collapsed to a single scalar,
//! the resulting `L × L` coarse Fisher is assembled from running Kronecker
//! factors (including cross-layer ones) and its damped inverse shifts every
//! layer's preconditioned gradient by one scalar.
//!
//! Module map:
//! - [`linalg`]: dense matrices, symmetric eigensolver, Cholesky, Kronecker identities
//! - [`network`]: MLP forward/backward exposing per-layer activations and derivatives
//! - [`data`]: planted-target synthetic data and CSV ingestion
//! - [`stats`]: running Kronecker-factor estimates
//! - [`precond`]: block inverses, coarse Fisher, two-level application, KL clipping
//! - [`optim`]: SGD, Adam and the K-FAC driver
//! - [`cli`]: configuration, training runs, grid comparisons
//! - `oracle` (feature `oracle`): brute-force dense references used by tests

pub mod cli;
pub mod error;
pub mod linalg;
pub mod data;
pub mod network;
pub mod optim;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod precond;
pub mod stats;

pub use error::{Error, Result};
