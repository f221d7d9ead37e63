use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archspace::{ArchMatrix, DiscreteArch, SearchSpaceSpec};
use crate::{Error, Result};

use super::generic::standalone_seconds;
use super::workload::LayerWorkload;
use super::{workload_of, HardwareBudget, Paradigm};

pub const LUT_FORMAT: &str = "ehdnas-lut-v1";

/// Per-block latency table, `LAT(f_k^(l))` in milliseconds.
///
/// Only the generic paradigm has one: pipeline stages are sized jointly, so
/// a block's latency is not defined independently of the rest of the
/// network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LutFile", into = "LutFile")]
pub struct Lut {
    num_candidates: usize,
    num_layers: usize,
    /// Row-major `K x L`.
    entries: Vec<f64>,
    budget: HardwareBudget,
}

#[derive(Serialize, Deserialize)]
struct LutFile {
    format: String,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: usize,
    paradigm: Paradigm,
    budget: HardwareBudget,
    /// One row per candidate block.
    entries_ms: Vec<Vec<f64>>,
}

impl TryFrom<LutFile> for Lut {
    type Error = Error;

    fn try_from(f: LutFile) -> Result<Self> {
        if f.format != LUT_FORMAT {
            return Err(Error::VersionMismatch {
                expected: LUT_FORMAT.into(),
                found: f.format,
            });
        }
        if f.entries_ms.len() != f.k || f.entries_ms.iter().any(|r| r.len() != f.l) {
            return Err(Error::ShapeMismatch(format!(
                "LUT rows do not form a {}x{} table",
                f.k, f.l
            )));
        }
        Lut::new(f.k, f.l, f.entries_ms.concat(), f.budget, f.paradigm)
    }
}

impl From<Lut> for LutFile {
    fn from(lut: Lut) -> Self {
        LutFile {
            format: LUT_FORMAT.into(),
            k: lut.num_candidates,
            l: lut.num_layers,
            paradigm: Paradigm::Generic,
            entries_ms: lut.entries.chunks(lut.num_layers).map(<[f64]>::to_vec).collect(),
            budget: lut.budget,
        }
    }
}

impl Lut {
    pub fn new(
        num_candidates: usize,
        num_layers: usize,
        entries: Vec<f64>,
        budget: HardwareBudget,
        paradigm: Paradigm,
    ) -> Result<Self> {
        if paradigm != Paradigm::Generic {
            return Err(Error::InvalidConfig(
                "a latency lookup table can only be built for the generic paradigm".into(),
            ));
        }
        if entries.len() != num_candidates * num_layers {
            return Err(Error::ShapeMismatch(format!(
                "{num_candidates}x{num_layers} LUT needs {} entries, got {}",
                num_candidates * num_layers,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("LUT entries must be finite and non-negative".into()));
        }
        Ok(Self {
            num_candidates,
            num_layers,
            entries,
            budget,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn budget(&self) -> &HardwareBudget {
        &self.budget
    }

    pub fn paradigm(&self) -> Paradigm {
        Paradigm::Generic
    }

    /// Latency of block `k` at layer `l`, in ms.
    pub fn entry(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.num_layers + l]
    }

    /// Sum of the selected entries of a discrete architecture.
    pub fn arch_latency(&self, arch: &DiscreteArch) -> Result<f64> {
        arch.check(self.num_candidates, self.num_layers)?;
        Ok(arch.ops().iter().enumerate().map(|(l, &k)| self.entry(k, l)).sum())
    }

    /// Mean and standard deviation of the table's latency estimate over
    /// uniformly sampled architectures: layers are independent, so both add
    /// up per layer.
    pub fn uniform_moments(&self) -> (f64, f64) {
        let k = self.num_candidates as f64;
        let (mut mean, mut var) = (0.0, 0.0);
        for l in 0..self.num_layers {
            let col: Vec<f64> = (0..self.num_candidates).map(|ki| self.entry(ki, l)).collect();
            let m = col.iter().sum::<f64>() / k;
            mean += m;
            var += col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k;
        }
        (mean, var.sqrt())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("LUT serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Benchmarks every catalog block on its own: its best tile, its own
/// overhead, weights on chip. The catalog is shared, so every layer gets
/// the same column.
pub fn build_lut(space: &SearchSpaceSpec, budget: &HardwareBudget) -> Lut {
    let k = space.num_candidates();
    let l = space.num_layers();
    // The mixed-layer workload of block k is independent of its position.
    let probe_arch = |op| DiscreteArch::uniform(op, l);
    let block_ms: Vec<f64> = (0..k)
        .map(|op| {
            let w: LayerWorkload = workload_of(&probe_arch(op), space).expect("probe arch is valid")[1].clone();
            standalone_seconds(&w, budget).0 * 1e3
        })
        .collect();
    let entries = block_ms.iter().flat_map(|&ms| std::iter::repeat_n(ms, l)).collect();
    Lut::new(k, l, entries, budget.clone(), Paradigm::Generic).expect("benchmarked entries are valid")
}

/// `sum_l sum_k a_k^(l) * LAT(f_k^(l))`.
pub fn lut_latency(lut: &Lut, m: &ArchMatrix) -> Result<f64> {
    if m.num_candidates() != lut.num_candidates || m.num_layers() != lut.num_layers {
        return Err(Error::ShapeMismatch(format!(
            "LUT is {}x{}, architecture matrix is {}x{}",
            lut.num_candidates,
            lut.num_layers,
            m.num_candidates(),
            m.num_layers()
        )));
    }
    Ok(m.values().iter().zip(&lut.entries).map(|(a, t)| a * t).sum())
}
