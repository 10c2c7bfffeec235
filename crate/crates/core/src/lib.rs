//! Spatial-temporal unified graph attention for traffic forecasting.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`optim`], [`gradcheck`]: a small 64-bit
//!   tensor engine with tape-based reverse-mode differentiation and Adam.
//! - [`stgraph`]: the spatial graph, its unified spatial-temporal expansion,
//!   and hop distances on it.
//! - [`partition`]: base-node selection, radius calibration and the paired
//!   static/shifted neighbourhood partitions.
//! - [`embedding`], [`attention`]: the input embedding with Laplacian and
//!   calendar position encodings, and subset-local multi-head attention.
//! - [`model`]: the full forecaster, training, metrics, the historical
//!   average baseline and checkpoints.

pub mod attention;
pub mod autodiff;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod partition;
pub mod stgraph;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
