use crate::archspace::{DiscreteArch, SearchSpaceSpec, BYTES_PER_VALUE};
use crate::{Error, Result};

use super::{
    layer_latency, weight_bits, workload_of, ChosenConfig, HardwareBudget, LatencyReport, LayerWorkload, Paradigm,
};

/// Double-buffered stage interface: two activation vectors of the wider
/// side of the stage.
pub fn stage_buffer_bits(w: &LayerWorkload) -> u64 {
    2 * w.in_features.max(w.out_features) * BYTES_PER_VALUE * 8
}

fn stage_cycles(macs: u64, alloc: u64) -> u64 {
    if macs == 0 {
        0
    } else {
        macs.div_ceil(alloc)
    }
}

/// Dedicated DSPs per pipeline stage.
///
/// Stages start with a share proportional to their MACs (at least one DSP
/// for every stage that computes, never more DSPs than MACs). Leftover DSPs
/// then go to the slowest stage that can still be sped up, in the smallest
/// increment that removes one cycle from it, until nothing more fits.
pub fn dse_pipeline_alloc(stage_macs: &[u64], dsp_count: u64) -> Result<Vec<u64>> {
    let nonzero = stage_macs.iter().filter(|&&m| m > 0).count();
    if (dsp_count as u128) < nonzero as u128 {
        return Err(Error::InfeasibleAllocation {
            nonzero_stages: nonzero,
            dsp_count,
        });
    }
    let total: u128 = stage_macs.iter().map(|&m| m as u128).sum();
    let mut alloc: Vec<u64> = stage_macs
        .iter()
        .map(|&m| {
            if m == 0 {
                0
            } else {
                let share = (dsp_count as u128 * m as u128 / total) as u64;
                share.clamp(1, m)
            }
        })
        .collect();

    // The minimum of one DSP per stage can overshoot the budget.
    let mut used: u64 = alloc.iter().sum();
    while used > dsp_count {
        let i = (0..alloc.len())
            .filter(|&i| alloc[i] > 1)
            .max_by_key(|&i| (alloc[i], std::cmp::Reverse(i)))
            .expect("dsp_count >= nonzero stages leaves a stage above one DSP");
        alloc[i] -= 1;
        used -= 1;
    }

    let mut remaining = dsp_count - used;
    loop {
        let candidate = (0..alloc.len())
            .filter_map(|i| {
                let c = stage_cycles(stage_macs[i], alloc[i]);
                if c <= 1 {
                    return None;
                }
                let need = stage_macs[i].div_ceil(c - 1) - alloc[i];
                (need <= remaining).then_some((i, c, need))
            })
            .max_by_key(|&(i, c, _)| (c, std::cmp::Reverse(i)));
        match candidate {
            Some((i, _, need)) => {
                alloc[i] += need;
                remaining -= need;
            }
            None => break,
        }
    }
    Ok(alloc)
}

/// Pipeline-paradigm latency of a layer sequence. Every layer is a stage
/// with its own DSPs; all weights and stage buffers must fit on chip.
pub fn pipeline_latency(workloads: &[LayerWorkload], budget: &HardwareBudget) -> Result<LatencyReport> {
    let storage = weight_bits(workloads) + workloads.iter().map(stage_buffer_bits).sum::<u64>();
    if storage > budget.on_chip_bits {
        return Ok(LatencyReport::infeasible(Paradigm::Pipeline, budget));
    }
    let macs: Vec<u64> = workloads.iter().map(|w| w.macs).collect();
    let alloc = match dse_pipeline_alloc(&macs, budget.dsp_count) {
        Ok(a) => a,
        Err(Error::InfeasibleAllocation { .. }) => return Ok(LatencyReport::infeasible(Paradigm::Pipeline, budget)),
        Err(e) => return Err(e),
    };
    let mut per_layer_ms = Vec::with_capacity(workloads.len());
    let mut bound = Vec::with_capacity(workloads.len());
    for (w, &a) in workloads.iter().zip(&alloc) {
        let l = layer_latency(w, a, budget, true)?;
        per_layer_ms.push(l.ms());
        bound.push(l.bound);
    }
    let total: f64 = per_layer_ms.iter().sum();
    let ii = per_layer_ms.iter().copied().fold(0.0, f64::max);
    Ok(LatencyReport {
        paradigm: Paradigm::Pipeline,
        budget: budget.name.clone(),
        feasible: true,
        total_ms: Some(total),
        per_layer_ms,
        bound,
        io_ms: 0.0,
        initiation_interval_ms: Some(ii),
        weights_resident: true,
        chosen_config: ChosenConfig::Pipeline { dsp_alloc: alloc },
    })
}

pub fn benchmark_pipeline(
    arch: &DiscreteArch,
    space: &SearchSpaceSpec,
    budget: &HardwareBudget,
) -> Result<LatencyReport> {
    pipeline_latency(&workload_of(arch, space)?, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perfmodel::OVERHEAD_CYCLES;

    #[test]
    fn proportional_split_is_exact() {
        assert_eq!(dse_pipeline_alloc(&[100, 300], 400).unwrap(), vec![100, 300]);
    }

    #[test]
    fn zero_stages_get_nothing() {
        assert_eq!(dse_pipeline_alloc(&[0, 500], 8).unwrap(), vec![0, 8]);
    }

    #[test]
    fn too_few_dsps() {
        assert!(matches!(
            dse_pipeline_alloc(&[1, 1], 1),
            Err(Error::InfeasibleAllocation {
                nonzero_stages: 2,
                dsp_count: 1
            })
        ));
    }

    #[test]
    fn minimum_share_never_overshoots() {
        let alloc = dse_pipeline_alloc(&[1, 1, 1000], 3).unwrap();
        assert_eq!(alloc.iter().sum::<u64>(), 3);
        assert!(alloc.iter().all(|&a| a >= 1));
    }

    #[test]
    fn leftovers_go_to_the_bottleneck() {
        // 15 DSPs over [30, 70]: proportional floors give [4, 10] (8 and 7
        // cycles) with one DSP left; stage 0 drops to 6 cycles with it.
        assert_eq!(dse_pipeline_alloc(&[30, 70], 15).unwrap(), vec![5, 10]);
        // [1, 99] on 10 DSPs: the minimum share already uses every DSP.
        assert_eq!(dse_pipeline_alloc(&[1, 99], 10).unwrap(), vec![1, 9]);
        // Never more DSPs than MACs.
        assert_eq!(dse_pipeline_alloc(&[50, 50], 101).unwrap(), vec![50, 50]);
    }

    #[test]
    fn two_stage_example() {
        let mut a = LayerWorkload::empty("a", 0);
        a.macs = 100;
        let mut b = LayerWorkload::empty("b", 0);
        b.macs = 300;
        let budget = HardwareBudget::new("t", 400, 1 << 20, 12.8e9, 200e6).unwrap();
        let r = pipeline_latency(&[a, b], &budget).unwrap();
        assert_eq!(
            r.chosen_config,
            ChosenConfig::Pipeline {
                dsp_alloc: vec![100, 300]
            }
        );
        let stage_ms = (1 + OVERHEAD_CYCLES) as f64 / 200e6 * 1e3;
        assert_eq!(r.initiation_interval_ms, Some(stage_ms));
        assert_eq!(r.total_ms, Some(2.0 * stage_ms));
    }

    #[test]
    fn over_budget_weights_are_infeasible() {
        let space = SearchSpaceSpec::wide();
        let r = benchmark_pipeline(&DiscreteArch::uniform(0, 6), &space, &HardwareBudget::small()).unwrap();
        assert!(!r.feasible);
        assert!(r.total_ms.is_none());
        assert!(r.latency_ms().is_err());
    }

    #[test]
    fn all_identity_pipeline_is_stem_head_and_overheads() {
        let space = SearchSpaceSpec::desk_default();
        let b = HardwareBudget::small();
        let r = benchmark_pipeline(&DiscreteArch::uniform(3, 6), &space, &b).unwrap();
        assert!(r.feasible);
        let overhead_ms = OVERHEAD_CYCLES as f64 / b.clock_hz * 1e3;
        assert!(r.per_layer_ms[1..7].iter().all(|&ms| ms == overhead_ms));
        let expected = r.per_layer_ms[0] + r.per_layer_ms[7] + 6.0 * overhead_ms;
        assert!((r.total_ms.unwrap() - expected).abs() < 1e-15);
    }
}
