use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{DiscreteArch, SearchSpaceSpec};
use crate::perfmodel::{benchmark, HardwareBudget, Paradigm};
use crate::{Error, Result};

/// Quantity [`brute_force_best`] minimises over feasible architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Latency,
    /// Slowest pipeline stage; equals the latency under the generic paradigm.
    InitiationInterval,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latency" => Ok(Objective::Latency),
            "ii" | "initiation_interval" => Ok(Objective::InitiationInterval),
            _ => Err(Error::InvalidConfig(format!("unknown objective {s:?} (latency or ii)"))),
        }
    }
}

/// Exhaustive minimum of `objective` over the space. Infeasible
/// architectures are skipped; `None` means none fits. Ties go to the
/// lexicographically smallest op list.
pub fn brute_force_best(
    space: &SearchSpaceSpec,
    budget: &HardwareBudget,
    paradigm: Paradigm,
    objective: Objective,
) -> Result<Option<(DiscreteArch, f64)>> {
    let archs: Vec<DiscreteArch> = space.enumerate()?.collect();
    let scored = archs
        .par_iter()
        .map(|a| {
            let r = benchmark(a, space, budget, paradigm)?;
            Ok(match objective {
                Objective::Latency => r.total_ms,
                Objective::InitiationInterval => r.initiation_interval_ms.or(r.total_ms),
            })
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in scored.into_iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    Ok(best.map(|(i, v)| (archs[i].clone(), v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{BlockKind, DEFAULT_CATALOG};

    #[test]
    fn identity_everywhere_is_fastest_on_the_default_space() {
        let space = SearchSpaceSpec::desk_default();
        let (arch, ms) = brute_force_best(&space, &HardwareBudget::small(), Paradigm::Generic, Objective::Latency)
            .unwrap()
            .unwrap();
        assert_eq!(arch, DiscreteArch::uniform(3, 6));
        let direct = benchmark(&arch, &space, &HardwareBudget::small(), Paradigm::Generic).unwrap();
        assert_eq!(Some(ms), direct.total_ms);
    }

    #[test]
    fn single_candidate_space_has_one_answer() {
        let space = SearchSpaceSpec::new(3, 16, 8, 2, &[BlockKind::LowRank { rank: 4 }]).unwrap();
        let (arch, _) = brute_force_best(&space, &HardwareBudget::large(), Paradigm::Pipeline, Objective::Latency)
            .unwrap()
            .unwrap();
        assert_eq!(arch, DiscreteArch::uniform(0, 3));
    }

    #[test]
    fn nothing_fits_a_tiny_pipeline_budget() {
        let space = SearchSpaceSpec::new(2, 64, 16, 4, &[BlockKind::FullDense]).unwrap();
        let tiny = HardwareBudget::new("tiny", 1, 8, 12.8e9, 200e6).unwrap();
        let r = brute_force_best(&space, &tiny, Paradigm::Pipeline, Objective::Latency).unwrap();
        assert_eq!(r, None);
    }

    #[test]
    fn oversized_spaces_are_refused() {
        let space = SearchSpaceSpec::new(12, 16, 8, 2, &DEFAULT_CATALOG).unwrap();
        let err =
            brute_force_best(&space, &HardwareBudget::large(), Paradigm::Generic, Objective::Latency).unwrap_err();
        assert!(matches!(err, Error::SpaceTooLarge { .. }));
    }
}
