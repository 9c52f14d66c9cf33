//! Reconstruction of time-resolved facade wind-pressure fields on a unified
//! spatial graph from sparse, partially missing sensor measurements.
//!
//! The crate provides:
//! - a numeric backbone (dense tensors, reverse-mode differentiation, conv /
//!   attention / normalization primitives, AdamW),
//! - construction of the 25x5 facade graph with sensor-enrichment edges,
//! - a data pipeline with leakage-free split/normalization, masked window
//!   sampling, and a synthetic field generator,
//! - the encoder / graph-propagator / decoder reconstruction network,
//! - the outage-aware composite training objective and training loop,
//! - full-sequence inference by weighted overlap-add plus the evaluation
//!   metric suite (RMSE / MAE / Pearson / Welch PSD bandpower),
//! - a two-stage predictive extension (sensor forecasting followed by field
//!   completion).

pub mod data;
// Tape buffers are large and short-lived; the pooling allocator keeps them
// resident instead of returning pages to the OS between windows.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub mod error;
pub mod forecast;
pub mod graph;
pub mod infer;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
