//! Numerical kernel for hidden-state diagnostics.
//!
//! Everything in this crate is pure computation over in-memory data: regime
//! labeling, contrastive geometry, standardize/PCA/logistic probes, the
//! statistical tests used to judge interventions, the intervention kernels
//! themselves, selective-prediction metrics, and a synthetic world with a
//! planted failure direction. File formats, reports and the command line
//! live in the `entangle` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` is how NaN gets rejected alongside the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the textbook statements of the eigen and Cholesky kernels
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod archive;
pub mod error;
pub mod geometry;
pub mod intervene;
pub mod linalg;
pub mod probes;
pub mod regimes;
pub mod rng;
pub mod selective;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
pub use linalg::Matrix;
