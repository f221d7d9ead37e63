//! Hardware-aware differentiable architecture search at desk scale.
//!
//! The crate is organised along the three stages of the pipeline:
//!
//! 1. [`perfmodel`] benchmarks architectures on an analytical model of a
//!    customized accelerator (generic and pipeline paradigms), builds
//!    per-block lookup tables, and produces `(architecture, latency)`
//!    datasets.
//! 2. [`hwloss`] learns a differentiable latency predictor from those
//!    datasets: a per-layer linear embedding of the relaxed architecture
//!    matrix followed by a three-layer MLP, trained with mean absolute error.
//! 3. [`dnas`] runs the bi-level search, alternating supernet weight updates
//!    with architecture updates on `task loss + beta * hardware loss`.
//!
//! [`archspace`] holds the layered search space and its encodings and
//! [`diffcore`] the small reverse-mode differentiation engine both the
//! predictor and the supernet are built on.

pub mod archspace;
pub mod diffcore;
pub mod dnas;
mod error;
pub mod hwloss;
pub mod optim;
pub mod parallel;
pub mod perfmodel;

pub use error::{Error, Result};
