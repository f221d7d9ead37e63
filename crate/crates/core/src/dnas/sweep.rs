use rayon::prelude::*;
use serde::Serialize;

use super::search::{search, train_final, FinalConfig, HardwareLoss, SearchConfig};
use super::task::TaskData;
use crate::archspace::{DiscreteArch, SearchSpaceSpec};
use crate::perfmodel::HardwareBudget;
use crate::{Error, Result};

/// One searched-and-retrained architecture of a beta sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub seed: u64,
    #[serde(skip)]
    pub arch: DiscreteArch,
    pub latency_small_ms: f64,
    pub latency_medium_ms: f64,
    pub latency_large_ms: f64,
    pub accuracy: f64,
}

/// Searches every `(beta, seed)` pair, retrains each result from scratch and
/// reports its latency on the three built-in budgets. Rows come back in
/// `betas`-major, `seeds`-minor order whatever the thread count.
pub fn sweep_beta(
    space: &SearchSpaceSpec,
    task: &TaskData,
    hw: Option<&dyn HardwareLoss>,
    base: &SearchConfig,
    final_cfg: &FinalConfig,
    betas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if betas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "a sweep needs at least one beta and one seed".into(),
        ));
    }
    let budgets = HardwareBudget::builtin();
    let cells: Vec<(f64, u64)> = betas.iter().flat_map(|&b| seeds.iter().map(move |&s| (b, s))).collect();
    cells
        .par_iter()
        .map(|&(beta, seed)| {
            let cfg = SearchConfig {
                beta,
                seed,
                ..base.clone()
            };
            let r = search(space, task, hw, &cfg, &budgets)?;
            let accuracy = train_final(
                &r.arch,
                space,
                task,
                &FinalConfig {
                    seed,
                    ..final_cfg.clone()
                },
            )?;
            log::info!("beta {beta} seed {seed}: {} accuracy {accuracy:.3}", r.arch);
            let lat = |name: &str| r.searched_latency_ms[name];
            Ok(SweepRow {
                beta,
                seed,
                latency_small_ms: lat("small"),
                latency_medium_ms: lat("medium"),
                latency_large_ms: lat("large"),
                arch: r.arch,
                accuracy,
            })
        })
        .collect()
}

/// The rows as CSV with a header line.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
