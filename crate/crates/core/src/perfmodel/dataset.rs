use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{sample_uniform, DiscreteArch, SearchSpaceSpec};
use crate::{Error, Result};

use super::{benchmark, HardwareBudget, Paradigm};

pub const DATASET_FORMAT: &str = "ehdnas-latds-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Where the latencies came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Generated(Paradigm),
    /// An external latency table, e.g. measured on a device.
    Ingested,
}

impl DataSource {
    fn tag(self) -> &'static str {
        match self {
            DataSource::Generated(p) => p.tag(),
            DataSource::Ingested => "ingested",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "GP" => Some(DataSource::Generated(Paradigm::Generic)),
            "PP" => Some(DataSource::Generated(Paradigm::Pipeline)),
            "ingested" => Some(DataSource::Ingested),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    #[serde(rename = "ops")]
    pub arch: DiscreteArch,
    pub latency_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: usize,
    paradigm: String,
    budget: String,
}

/// `(architecture, latency)` pairs over one fixed `(K, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyDataset {
    num_candidates: usize,
    num_layers: usize,
    source: DataSource,
    budget: String,
    split: Option<Split>,
    records: Vec<LatencyRecord>,
}

impl LatencyDataset {
    pub fn new(
        num_candidates: usize,
        num_layers: usize,
        source: DataSource,
        budget: impl Into<String>,
        records: Vec<LatencyRecord>,
    ) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.arch
                .check(num_candidates, num_layers)
                .map_err(|e| Error::Validation(format!("record {i}: {e}")))?;
            check_latency(r.latency_ms).map_err(|m| Error::Validation(format!("record {i}: {m}")))?;
        }
        Ok(Self {
            num_candidates,
            num_layers,
            source,
            budget: budget.into(),
            split: None,
            records,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    pub fn budget(&self) -> &str {
        &self.budget
    }

    pub fn split(&self) -> Option<Split> {
        self.split
    }

    pub fn records(&self) -> &[LatencyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// JSON Lines: a header object, then one record per line.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            k: self.num_candidates,
            l: self.num_layers,
            paradigm: self.source.tag().into(),
            budget: self.budget.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ingest_dataset(path)
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        message: "missing header line".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("bad header: {e}"),
                    })?;
                }
            }
        };
        if header.format != DATASET_FORMAT {
            return Err(Error::VersionMismatch {
                expected: DATASET_FORMAT.into(),
                found: header.format,
            });
        }
        let source = DataSource::from_tag(&header.paradigm).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("unknown paradigm {:?}", header.paradigm),
        })?;

        let mut records = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LatencyRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            record.arch.check(header.k, header.l).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            check_latency(record.latency_ms).map_err(|m| Error::Validation(format!("line {line_no}: {m}")))?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset("file holds no records".into()));
        }
        Ok(Self {
            num_candidates: header.k,
            num_layers: header.l,
            source,
            budget: header.budget,
            split: None,
            records,
        })
    }
}

fn check_latency(ms: f64) -> std::result::Result<(), String> {
    if ms.is_finite() && ms > 0.0 {
        Ok(())
    } else {
        Err(format!("latency must be positive and finite, got {ms}"))
    }
}

/// Reads and validates a latency table. `(K, L)` come from the header.
pub fn ingest_dataset(path: impl AsRef<Path>) -> Result<LatencyDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    LatencyDataset::from_reader(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSplits {
    pub train: LatencyDataset,
    pub val: LatencyDataset,
    pub test: LatencyDataset,
    /// Sampled architectures dropped because they do not fit the budget.
    pub rejected: usize,
}

/// Samples `n_train + n_val + n_test` architectures from one seeded stream,
/// benchmarks them and splits them by sampling order. Architectures that do
/// not fit the budget are dropped, so pipeline splits can come out short.
pub fn gen_dataset(
    space: &SearchSpaceSpec,
    budget: &HardwareBudget,
    paradigm: Paradigm,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<GeneratedSplits> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidConfig("every split needs at least one sample".into()));
    }
    let archs = sample_uniform(space, n_train + n_val + n_test, seed);
    let latencies: Vec<Option<f64>> = archs
        .par_iter()
        .map(|a| benchmark(a, space, budget, paradigm).map(|r| r.total_ms))
        .collect::<Result<_>>()?;

    let mut rejected = 0;
    let mut take = |range: std::ops::Range<usize>, split: Split| -> Result<LatencyDataset> {
        let records: Vec<LatencyRecord> = range
            .filter_map(|i| match latencies[i] {
                Some(latency_ms) => Some(LatencyRecord {
                    arch: archs[i].clone(),
                    latency_ms,
                }),
                None => {
                    rejected += 1;
                    None
                }
            })
            .collect();
        if records.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "every sampled {split:?} architecture exceeds the {} budget under {}",
                budget.name,
                paradigm.tag()
            )));
        }
        let ds = LatencyDataset::new(
            space.num_candidates(),
            space.num_layers(),
            DataSource::Generated(paradigm),
            budget.name.clone(),
            records,
        )?;
        Ok(ds.with_split(split))
    };
    let train = take(0..n_train, Split::Train)?;
    let val = take(n_train..n_train + n_val, Split::Val)?;
    let test = take(n_train + n_val..n_train + n_val + n_test, Split::Test)?;
    if rejected > 0 {
        log::info!(
            "dropped {rejected} architectures that exceed the {} budget",
            budget.name
        );
    }
    Ok(GeneratedSplits {
        train,
        val,
        test,
        rejected,
    })
}
