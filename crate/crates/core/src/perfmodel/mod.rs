//! Analytical end-to-end latency model of a customized DNN accelerator.
//!
//! Benchmarking runs in three stages: workload extraction ([`workload_of`]),
//! paradigm-specific latency modeling ([`benchmark_generic`],
//! [`benchmark_pipeline`]) and design-space exploration of the hardware
//! configuration inside each paradigm.
//!
//! Every layer is costed with the same roofline kernel ([`layer_latency`]):
//! one MAC per DSP per cycle, DRAM streaming at the budget bandwidth, and a
//! fixed per-layer overhead of [`OVERHEAD_CYCLES`].

mod budget;
mod dataset;
mod generic;
mod lut;
mod pipeline;
mod roofline;
mod workload;

use serde::{Deserialize, Serialize};

pub use budget::{HardwareBudget, DDR3_1600_BYTES_PER_SEC, MBIT};
pub use dataset::{
    gen_dataset, ingest_dataset, DataSource, GeneratedSplits, LatencyDataset, LatencyRecord, Split, DATASET_FORMAT,
};
pub use generic::{benchmark_generic, candidate_tiles, generic_latency, generic_latency_for_tile, tile_cycles, Tile};
pub use lut::{build_lut, lut_latency, Lut};
pub use pipeline::{benchmark_pipeline, dse_pipeline_alloc, pipeline_latency, stage_buffer_bits};
pub use roofline::{layer_latency, Bound, LayerLatency, OVERHEAD_CYCLES};
pub use workload::{workload_of, LayerWorkload};

use crate::archspace::{DiscreteArch, SearchSpaceSpec};
use crate::Result;

/// Accelerator organisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    /// One shared compute array processes the layers one after another.
    #[serde(rename = "GP")]
    Generic,
    /// A dedicated hardware stage per layer, all weights on chip.
    #[serde(rename = "PP")]
    Pipeline,
}

impl Paradigm {
    pub fn tag(self) -> &'static str {
        match self {
            Paradigm::Generic => "GP",
            Paradigm::Pipeline => "PP",
        }
    }
}

impl std::str::FromStr for Paradigm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GP" | "GENERIC" => Ok(Paradigm::Generic),
            "PP" | "PIPELINE" => Ok(Paradigm::Pipeline),
            _ => Err(crate::Error::InvalidConfig(format!(
                "unknown paradigm {s:?} (expected GP or PP)"
            ))),
        }
    }
}

/// Hardware configuration picked by design-space exploration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChosenConfig {
    /// Output/input tile of the shared compute array.
    Tile { tm: u64, tn: u64 },
    /// DSPs dedicated to each pipeline stage.
    Pipeline { dsp_alloc: Vec<u64> },
    /// No configuration fits the budget.
    None,
}

/// Result of benchmarking one architecture on one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub paradigm: Paradigm,
    pub budget: String,
    pub feasible: bool,
    /// End-to-end latency; absent when the design does not fit.
    pub total_ms: Option<f64>,
    pub per_layer_ms: Vec<f64>,
    pub bound: Vec<Bound>,
    /// Network input/output transfer added on top of the layers (generic
    /// paradigm only; zero for pipelines).
    pub io_ms: f64,
    /// Slowest stage of a pipeline.
    pub initiation_interval_ms: Option<f64>,
    pub weights_resident: bool,
    pub chosen_config: ChosenConfig,
}

impl LatencyReport {
    /// The end-to-end latency, or a validation error if the design does not
    /// fit the budget.
    pub fn latency_ms(&self) -> Result<f64> {
        self.total_ms.ok_or_else(|| {
            crate::Error::Validation(format!(
                "architecture exceeds the {} budget under the {} paradigm",
                self.budget,
                self.paradigm.tag()
            ))
        })
    }

    pub(crate) fn infeasible(paradigm: Paradigm, budget: &HardwareBudget) -> Self {
        Self {
            paradigm,
            budget: budget.name.clone(),
            feasible: false,
            total_ms: None,
            per_layer_ms: Vec::new(),
            bound: Vec::new(),
            io_ms: 0.0,
            initiation_interval_ms: None,
            weights_resident: false,
            chosen_config: ChosenConfig::None,
        }
    }
}

/// Benchmarks `arch` under the chosen paradigm.
pub fn benchmark(
    arch: &DiscreteArch,
    space: &SearchSpaceSpec,
    budget: &HardwareBudget,
    paradigm: Paradigm,
) -> Result<LatencyReport> {
    match paradigm {
        Paradigm::Generic => benchmark_generic(arch, space, budget),
        Paradigm::Pipeline => benchmark_pipeline(arch, space, budget),
    }
}

/// Total weight storage of a workload list, in bits.
pub(crate) fn weight_bits(workloads: &[LayerWorkload]) -> u64 {
    workloads.iter().map(|w| w.weight_bytes * 8).sum()
}
