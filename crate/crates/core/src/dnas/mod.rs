//! Differentiable architecture search with a hardware term.
//!
//! The supernet mixes every candidate block of a layer by the layer's column
//! of the relaxed architecture matrix. Weights and architecture logits are
//! updated in alternation, the latter on validation cross-entropy plus
//! `beta` times a differentiable latency estimate.

mod dot;
mod oracle;
mod search;
mod supernet;
mod sweep;
mod task;

pub use dot::export_dot;
pub use oracle::{brute_force_best, Objective};
pub use search::{
    search, train_final, EpochRecord, FinalConfig, HardwareLoss, HwKind, HwScale, SearchConfig, SearchResult,
};
pub use supernet::Supernet;
pub use sweep::{sweep_beta, sweep_csv, SweepRow};
pub use task::{gen_task_data, TaskData, TaskSplit};
