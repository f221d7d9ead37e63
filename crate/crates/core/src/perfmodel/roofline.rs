use serde::{Deserialize, Serialize};

use super::{HardwareBudget, LayerWorkload};
use crate::{Error, Result};

/// Fixed per-layer cost (control, pipeline fill, synchronisation).
pub const OVERHEAD_CYCLES: u64 = 64;

/// Which roofline term limits a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLatency {
    pub seconds: f64,
    pub bound: Bound,
}

impl LayerLatency {
    pub fn ms(&self) -> f64 {
        self.seconds * 1e3
    }
}

/// `max(compute, memory) + overhead`, ties reported as compute bound.
pub(crate) fn roofline(compute_cycles: u64, streamed_bytes: u64, budget: &HardwareBudget) -> LayerLatency {
    let compute_s = compute_cycles as f64 / budget.clock_hz;
    let memory_s = streamed_bytes as f64 / budget.dram_bytes_per_sec;
    let (core, bound) = if compute_s >= memory_s {
        (compute_s, Bound::Compute)
    } else {
        (memory_s, Bound::Memory)
    };
    LayerLatency {
        seconds: core + OVERHEAD_CYCLES as f64 / budget.clock_hz,
        bound,
    }
}

/// Latency of one layer given `dsp_alloc` DSPs, at one MAC per DSP per
/// cycle.
pub fn layer_latency(
    w: &LayerWorkload,
    dsp_alloc: u64,
    budget: &HardwareBudget,
    weights_resident: bool,
) -> Result<LayerLatency> {
    let cycles = match (w.macs, dsp_alloc) {
        (0, _) => 0,
        (_, 0) => {
            return Err(Error::InvalidConfig(format!(
                "layer {} has {} MACs but no DSPs",
                w.label, w.macs
            )))
        }
        (macs, dsp) => macs.div_ceil(dsp),
    };
    Ok(roofline(cycles, w.streamed_bytes(weights_resident), budget))
}
