use crate::archspace::{DenseShape, DiscreteArch, SearchSpaceSpec};
use crate::Result;

use super::roofline::roofline;
use super::{weight_bits, workload_of, Bound, ChosenConfig, HardwareBudget, LatencyReport, LayerWorkload, Paradigm};

/// Largest tile edge the compute array supports.
const MAX_TILE: u64 = 1024;

/// `Tm` output features by `Tn` input features processed per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tile {
    pub tm: u64,
    pub tn: u64,
}

impl Tile {
    pub fn dsps(&self) -> u64 {
        self.tm * self.tn
    }
}

/// Power-of-two tiles up to 1024 a side that fit in `dsp_count` DSPs,
/// ordered by DSP usage and then by `Tm`.
pub fn candidate_tiles(dsp_count: u64) -> Vec<Tile> {
    let edges: Vec<u64> = (0..).map(|p| 1u64 << p).take_while(|&e| e <= MAX_TILE).collect();
    let mut tiles: Vec<Tile> = edges
        .iter()
        .flat_map(|&tm| edges.iter().map(move |&tn| Tile { tm, tn }))
        .filter(|t| t.dsps() <= dsp_count)
        .collect();
    tiles.sort_by_key(|t| (t.dsps(), t.tm));
    tiles
}

/// Cycles to run the dense products of one layer on a `tile` array.
pub fn tile_cycles(sub_ops: &[DenseShape], tile: Tile) -> u64 {
    sub_ops
        .iter()
        .map(|op| op.out_features.div_ceil(tile.tm) * op.in_features.div_ceil(tile.tn))
        .sum()
}

/// Generic-paradigm latency of a layer sequence with a fixed shared tile.
///
/// Weights stay on chip when the whole network fits, otherwise every layer
/// streams its weights. The network input and output cross DRAM once more on
/// top of the per-layer traffic.
pub fn generic_latency_for_tile(workloads: &[LayerWorkload], budget: &HardwareBudget, tile: Tile) -> LatencyReport {
    let resident = weight_bits(workloads) <= budget.on_chip_bits;
    let mut per_layer_s = Vec::with_capacity(workloads.len());
    let mut bound = Vec::with_capacity(workloads.len());
    for w in workloads {
        let l = roofline(tile_cycles(&w.sub_ops, tile), w.streamed_bytes(resident), budget);
        per_layer_s.push(l.seconds);
        bound.push(l.bound);
    }
    let io_bytes = workloads.first().map_or(0, |w| w.in_bytes) + workloads.last().map_or(0, |w| w.out_bytes);
    let io_s = io_bytes as f64 / budget.dram_bytes_per_sec;
    let total_s = per_layer_s.iter().sum::<f64>() + io_s;
    LatencyReport {
        paradigm: Paradigm::Generic,
        budget: budget.name.clone(),
        feasible: true,
        total_ms: Some(total_s * 1e3),
        per_layer_ms: per_layer_s.iter().map(|s| s * 1e3).collect(),
        bound,
        io_ms: io_s * 1e3,
        initiation_interval_ms: None,
        weights_resident: resident,
        chosen_config: ChosenConfig::Tile {
            tm: tile.tm,
            tn: tile.tn,
        },
    }
}

/// Design-space exploration over `tiles`; the first tile reaching the
/// minimum total wins.
pub(crate) fn best_over_tiles(
    workloads: &[LayerWorkload],
    budget: &HardwareBudget,
    tiles: &[Tile],
) -> Option<LatencyReport> {
    let mut best: Option<LatencyReport> = None;
    for &tile in tiles {
        let report = generic_latency_for_tile(workloads, budget, tile);
        if best.as_ref().is_none_or(|b| report.total_ms < b.total_ms) {
            best = Some(report);
        }
    }
    best
}

/// Generic-paradigm latency with the tile chosen by exhaustive DSE.
pub fn generic_latency(workloads: &[LayerWorkload], budget: &HardwareBudget) -> LatencyReport {
    best_over_tiles(workloads, budget, &candidate_tiles(budget.dsp_count))
        .expect("a 1x1 tile always fits a positive DSP budget")
}

pub fn benchmark_generic(
    arch: &DiscreteArch,
    space: &SearchSpaceSpec,
    budget: &HardwareBudget,
) -> Result<LatencyReport> {
    Ok(generic_latency(&workload_of(arch, space)?, budget))
}

/// Fastest standalone latency of one layer over its own best tile.
pub(crate) fn standalone_seconds(w: &LayerWorkload, budget: &HardwareBudget) -> (f64, Bound) {
    candidate_tiles(budget.dsp_count)
        .into_iter()
        .map(|t| roofline(tile_cycles(&w.sub_ops, t), w.streamed_bytes(true), budget))
        .fold((f64::INFINITY, Bound::Compute), |acc, l| {
            if l.seconds < acc.0 {
                (l.seconds, l.bound)
            } else {
                acc
            }
        })
}
