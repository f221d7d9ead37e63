use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Peak DDR3-1600 bandwidth: 1600 MT/s on a 64-bit bus.
pub const DDR3_1600_BYTES_PER_SEC: f64 = 12.8e9;

/// On-chip memory sizes are quoted in Mb of 2^20 bits.
pub const MBIT: u64 = 1 << 20;

const DEFAULT_CLOCK_HZ: f64 = 200e6;

/// Resources available to the accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BudgetFile", into = "BudgetFile")]
pub struct HardwareBudget {
    pub name: String,
    pub dsp_count: u64,
    pub on_chip_bits: u64,
    pub dram_bytes_per_sec: f64,
    pub clock_hz: f64,
}

/// On-disk form of a budget, in the units hardware data sheets use.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BudgetFile {
    name: String,
    dsp_count: u64,
    on_chip_mbits: f64,
    dram_gbytes_per_sec: f64,
    clock_mhz: f64,
}

impl TryFrom<BudgetFile> for HardwareBudget {
    type Error = Error;

    fn try_from(f: BudgetFile) -> Result<Self> {
        HardwareBudget::new(
            f.name,
            f.dsp_count,
            (f.on_chip_mbits * MBIT as f64).round() as u64,
            f.dram_gbytes_per_sec * 1e9,
            f.clock_mhz * 1e6,
        )
    }
}

impl From<HardwareBudget> for BudgetFile {
    fn from(b: HardwareBudget) -> Self {
        BudgetFile {
            name: b.name,
            dsp_count: b.dsp_count,
            on_chip_mbits: b.on_chip_bits as f64 / MBIT as f64,
            dram_gbytes_per_sec: b.dram_bytes_per_sec / 1e9,
            clock_mhz: b.clock_hz / 1e6,
        }
    }
}

impl HardwareBudget {
    pub fn new(
        name: impl Into<String>,
        dsp_count: u64,
        on_chip_bits: u64,
        dram_bytes_per_sec: f64,
        clock_hz: f64,
    ) -> Result<Self> {
        let budget = Self {
            name: name.into(),
            dsp_count,
            on_chip_bits,
            dram_bytes_per_sec,
            clock_hz,
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if dsp_count == 0 || on_chip_bits == 0 || !positive(dram_bytes_per_sec) || !positive(clock_hz) {
            return Err(Error::Validation(format!(
                "budget {:?}: all resources must be strictly positive",
                budget.name
            )));
        }
        Ok(budget)
    }

    fn edge_to_cloud(name: &str, dsp_count: u64, on_chip_mbits: u64) -> Self {
        Self::new(
            name,
            dsp_count,
            on_chip_mbits * MBIT,
            DDR3_1600_BYTES_PER_SEC,
            DEFAULT_CLOCK_HZ,
        )
        .expect("built-in budgets are valid")
    }

    /// 1400 DSPs, 46 Mb on chip.
    pub fn small() -> Self {
        Self::edge_to_cloud("small", 1400, 46)
    }

    /// 2400 DSPs, 70 Mb on chip.
    pub fn medium() -> Self {
        Self::edge_to_cloud("medium", 2400, 70)
    }

    /// 4800 DSPs, 141 Mb on chip.
    pub fn large() -> Self {
        Self::edge_to_cloud("large", 4800, 141)
    }

    /// The three built-in budgets, smallest first.
    pub fn builtin() -> [Self; 3] {
        [Self::small(), Self::medium(), Self::large()]
    }

    /// Resolves `small`/`medium`/`large` or reads a JSON budget file.
    pub fn from_name_or_path(spec: &str) -> Result<Self> {
        match spec {
            "small" => Ok(Self::small()),
            "medium" => Ok(Self::medium()),
            "large" => Ok(Self::large()),
            path => Self::load(path),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn cycle_seconds(&self) -> f64 {
        1.0 / self.clock_hz
    }
}
