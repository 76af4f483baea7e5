//! Graph convolutions parameterized by discretized differential operators.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`] builds the discrete supports (point clouds, k-NN graphs,
//!   regular grids, mesh sampling, the synthetic shape dataset).
//! * [`sparse`] is a small coordinate/compressed-row sparse matrix with
//!   Matrix Market I/O.
//! * [`diffops`] assembles per-axis gradient, edge-average and transposed
//!   derivative operators and evaluates the 7-block differential feature map
//!   in a fused edge sweep.
//! * [`conv`] is the learnable layer: differential features, pointwise map,
//!   batch normalization and ReLU, with hand-written reverse mode.
//! * [`amg`] provides aggregation-based pooling (heavy-edge matching,
//!   Galerkin coarsening, smoothed prolongation).
//! * [`network`] stacks the above into a point-cloud classifier and trains it.
//! * [`bench`] holds the analytic FLOP model and a latency harness.

pub mod amg;
pub mod bench;
pub mod conv;
pub mod diffops;
mod error;
pub mod geometry;
pub mod network;
pub mod sparse;
pub mod tensors;

pub use error::{Error, Result};

/// Row-major N×3 vertex coordinates.
pub type Positions = Vec<[f64; 3]>;

/// Format a float for machine-readable output: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}
