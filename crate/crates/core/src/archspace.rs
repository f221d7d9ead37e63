//! Layered search space, architecture encodings, relaxation and sampling.
//!
//! A search space is a chain of `L` mixed layers, each choosing one of `K`
//! candidate blocks from a catalog shared by every layer. A discrete
//! architecture is one block index per layer; its relaxed counterpart is a
//! `K x L` matrix whose columns are probability vectors over the catalog.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bytes per stored value (16-bit fixed point on the accelerator datapath).
pub const BYTES_PER_VALUE: u64 = 2;

/// Spaces up to this many architectures may be enumerated exhaustively.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

const COLUMN_SUM_TOL: f64 = 1e-9;

/// Family of a candidate block. Every block maps `H` features to `H`
/// features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    /// `H x H` affine followed by ReLU.
    FullDense,
    /// `H -> r -> H` factorised affine followed by ReLU.
    LowRank {
        rank: usize,
    },
    Identity,
    Zero,
}

/// Shape of one dense matrix-vector product inside a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseShape {
    pub out_features: u64,
    pub in_features: u64,
}

impl DenseShape {
    pub fn macs(&self) -> u64 {
        self.out_features * self.in_features
    }
}

/// One entry of the shared block catalog, with its per-sample costs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateBlock {
    pub id: usize,
    pub kind: BlockKind,
    pub macs_per_sample: u64,
    pub weight_bytes: u64,
    /// Output activation bytes written by the block. Parameter-free blocks
    /// move no data of their own.
    pub activation_bytes: u64,
}

impl CandidateBlock {
    fn new(id: usize, kind: BlockKind, hidden: u64) -> Result<Self> {
        if let BlockKind::LowRank { rank } = kind {
            if rank == 0 {
                return Err(Error::InvalidConfig("low-rank block needs rank >= 1".into()));
            }
        }
        let macs: u64 = Self::sub_ops_for(kind, hidden).iter().map(DenseShape::macs).sum();
        let activation_bytes = if macs == 0 { 0 } else { hidden * BYTES_PER_VALUE };
        Ok(Self {
            id,
            kind,
            macs_per_sample: macs,
            weight_bytes: macs * BYTES_PER_VALUE,
            activation_bytes,
        })
    }

    pub fn rank(&self) -> Option<usize> {
        match self.kind {
            BlockKind::LowRank { rank } => Some(rank),
            _ => None,
        }
    }

    /// Human-readable label, also used in DOT output.
    pub fn name(&self) -> String {
        match self.kind {
            BlockKind::FullDense => "full_dense".to_string(),
            BlockKind::LowRank { rank } => format!("low_rank_r{rank}"),
            BlockKind::Identity => "identity".to_string(),
            BlockKind::Zero => "zero".to_string(),
        }
    }

    pub fn is_parameter_free(&self) -> bool {
        matches!(self.kind, BlockKind::Identity | BlockKind::Zero)
    }

    /// The dense products the block performs, in execution order.
    pub fn sub_ops(&self, hidden: usize) -> Vec<DenseShape> {
        Self::sub_ops_for(self.kind, hidden as u64)
    }

    fn sub_ops_for(kind: BlockKind, hidden: u64) -> Vec<DenseShape> {
        match kind {
            BlockKind::FullDense => vec![DenseShape {
                out_features: hidden,
                in_features: hidden,
            }],
            BlockKind::LowRank { rank } => vec![
                DenseShape {
                    out_features: rank as u64,
                    in_features: hidden,
                },
                DenseShape {
                    out_features: hidden,
                    in_features: rank as u64,
                },
            ],
            BlockKind::Identity | BlockKind::Zero => Vec::new(),
        }
    }
}

/// On-disk form of a search space.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpaceFile {
    num_layers: usize,
    hidden_width: usize,
    input_dim: usize,
    num_classes: usize,
    catalog: Vec<BlockKind>,
}

/// The layered search space: `L` mixed layers over a shared catalog of `K`
/// blocks, a `d -> H` stem and an `H -> C` head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SpaceFile", into = "SpaceFile")]
pub struct SearchSpaceSpec {
    num_layers: usize,
    hidden_width: usize,
    input_dim: usize,
    num_classes: usize,
    catalog: Vec<CandidateBlock>,
}

impl TryFrom<SpaceFile> for SearchSpaceSpec {
    type Error = Error;

    fn try_from(f: SpaceFile) -> Result<Self> {
        SearchSpaceSpec::new(f.num_layers, f.hidden_width, f.input_dim, f.num_classes, &f.catalog)
    }
}

impl From<SearchSpaceSpec> for SpaceFile {
    fn from(s: SearchSpaceSpec) -> Self {
        SpaceFile {
            num_layers: s.num_layers,
            hidden_width: s.hidden_width,
            input_dim: s.input_dim,
            num_classes: s.num_classes,
            catalog: s.catalog.iter().map(|b| b.kind).collect(),
        }
    }
}

/// The catalog of the default desk-scale space.
pub const DEFAULT_CATALOG: [BlockKind; 5] = [
    BlockKind::FullDense,
    BlockKind::LowRank { rank: 4 },
    BlockKind::LowRank { rank: 8 },
    BlockKind::Identity,
    BlockKind::Zero,
];

impl SearchSpaceSpec {
    pub fn new(
        num_layers: usize,
        hidden_width: usize,
        input_dim: usize,
        num_classes: usize,
        catalog: &[BlockKind],
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::InvalidConfig("search space needs at least one layer".into()));
        }
        if catalog.is_empty() {
            return Err(Error::InvalidConfig("block catalog is empty".into()));
        }
        if hidden_width == 0 || input_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig(
                "hidden width, input dimension and class count must be positive".into(),
            ));
        }
        let catalog = catalog
            .iter()
            .enumerate()
            .map(|(id, &kind)| CandidateBlock::new(id, kind, hidden_width as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_layers,
            hidden_width,
            input_dim,
            num_classes,
            catalog,
        })
    }

    /// `L = 6`, `K = 5`, `H = 32`, `d = 16`, `C = 4`: 15625 architectures.
    pub fn desk_default() -> Self {
        Self::new(6, 32, 16, 4, &DEFAULT_CATALOG).expect("default space is valid")
    }

    /// The default catalog at `H = 1024`, wide enough for weight storage to
    /// press against on-chip memory budgets.
    pub fn wide() -> Self {
        Self::new(6, 1024, 16, 4, &DEFAULT_CATALOG).expect("wide space is valid")
    }

    /// Resolves a built-in preset name (`default`, `wide`) or reads a JSON
    /// space file.
    pub fn from_name_or_path(spec: &str) -> Result<Self> {
        match spec {
            "default" => Ok(Self::desk_default()),
            "wide" => Ok(Self::wide()),
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

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_candidates(&self) -> usize {
        self.catalog.len()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn catalog(&self) -> &[CandidateBlock] {
        &self.catalog
    }

    pub fn block(&self, k: usize) -> &CandidateBlock {
        &self.catalog[k]
    }

    /// Index of the first catalog entry of the given kind.
    pub fn find(&self, kind: BlockKind) -> Option<usize> {
        self.catalog.iter().position(|b| b.kind == kind)
    }

    /// `K^L`, as a float so huge spaces do not overflow.
    pub fn cardinality(&self) -> f64 {
        (self.num_candidates() as f64).powi(self.num_layers as i32)
    }

    /// All architectures in lexicographic order of their op lists.
    pub fn enumerate(&self) -> Result<impl Iterator<Item = DiscreteArch> + '_> {
        let size = self.cardinality();
        if size > ENUMERATION_LIMIT as f64 {
            return Err(Error::SpaceTooLarge {
                size,
                limit: ENUMERATION_LIMIT,
            });
        }
        let k = self.num_candidates();
        let l = self.num_layers;
        Ok((0..size as u64).map(move |mut code| {
            let mut ops = vec![0; l];
            for slot in ops.iter_mut().rev() {
                *slot = (code % k as u64) as usize;
                code /= k as u64;
            }
            DiscreteArch(ops)
        }))
    }
}

/// One block index per layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteArch(Vec<usize>);

impl DiscreteArch {
    pub fn new(ops: Vec<usize>) -> Self {
        Self(ops)
    }

    /// The same block in every layer.
    pub fn uniform(op: usize, num_layers: usize) -> Self {
        Self(vec![op; num_layers])
    }

    pub fn ops(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, num_candidates: usize, num_layers: usize) -> Result<()> {
        if self.0.len() != num_layers {
            return Err(Error::InvalidArch(format!(
                "expected {num_layers} ops, got {}",
                self.0.len()
            )));
        }
        if let Some((l, &op)) = self.0.iter().enumerate().find(|(_, &op)| op >= num_candidates) {
            return Err(Error::InvalidArch(format!(
                "op {op} at layer {l} is out of range for K={num_candidates}"
            )));
        }
        Ok(())
    }

    pub fn check_for(&self, space: &SearchSpaceSpec) -> Result<()> {
        self.check(space.num_candidates(), space.num_layers())
    }
}

impl fmt::Display for DiscreteArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for DiscreteArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidArch(format!("bad op index {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(DiscreteArch)
    }
}

/// First broken [`ArchMatrix`] invariant, as reported by
/// [`ArchMatrix::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { expected: usize, found: usize },
    NonFinite { k: usize, l: usize },
    Range { k: usize, l: usize, value: f64 },
    ColumnSum { l: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected, found } => {
                write!(f, "shape: expected {expected} entries, found {found}")
            }
            Violation::NonFinite { k, l } => write!(f, "non-finite entry at ({k}, {l})"),
            Violation::Range { k, l, value } => {
                write!(f, "range: entry ({k}, {l}) = {value} outside [0, 1]")
            }
            Violation::ColumnSum { l, sum } => write!(f, "column sum: layer {l} sums to {sum}"),
        }
    }
}

/// Row-major `K x L` real matrix; the raw storage behind [`ArchMatrix`] and
/// [`ArchLogits`].
#[derive(Debug, Clone, PartialEq)]
struct KxL {
    k: usize,
    l: usize,
    values: Vec<f64>,
}

impl KxL {
    fn from_vec(k: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * l {
            return Err(Error::ShapeMismatch(format!(
                "{k}x{l} matrix needs {} values, got {}",
                k * l,
                values.len()
            )));
        }
        Ok(Self { k, l, values })
    }

    fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.l + l]
    }

    fn column(&self, l: usize) -> Vec<f64> {
        (0..self.k).map(|k| self.get(k, l)).collect()
    }
}

/// Unconstrained architecture parameters; [`relax`] maps them to an
/// [`ArchMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArchLogits(KxL);

impl ArchLogits {
    pub fn zeros(k: usize, l: usize) -> Self {
        Self(KxL {
            k,
            l,
            values: vec![0.0; k * l],
        })
    }

    /// Row-major `K x L` values.
    pub fn from_vec(k: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        KxL::from_vec(k, l, values).map(Self)
    }

    pub fn num_candidates(&self) -> usize {
        self.0.k
    }

    pub fn num_layers(&self) -> usize {
        self.0.l
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.0.get(k, l)
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0.values
    }
}

/// Relaxed architecture `a in [0,1]^{K x L}` with stochastic columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchMatrix(KxL);

impl ArchMatrix {
    /// Builds a matrix from row-major values without checking the simplex
    /// invariants; see [`ArchMatrix::validate`].
    pub fn from_vec_unchecked(k: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        KxL::from_vec(k, l, values).map(Self)
    }

    /// Builds a matrix from row-major values and rejects it unless
    /// [`ArchMatrix::validate`] passes.
    pub fn from_vec(k: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::from_vec_unchecked(k, l, values)?;
        m.validate().map_err(|v| Error::InvalidArch(v.to_string()))?;
        Ok(m)
    }

    /// Builds a matrix from one probability vector per layer.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let l = columns.len();
        let k = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != k) {
            return Err(Error::ShapeMismatch("columns have different lengths".into()));
        }
        let mut values = vec![0.0; k * l];
        for (li, col) in columns.iter().enumerate() {
            for (ki, &v) in col.iter().enumerate() {
                values[ki * l + li] = v;
            }
        }
        Self::from_vec_unchecked(k, l, values)
    }

    /// Every column `1/K`.
    pub fn uniform(k: usize, l: usize) -> Self {
        Self(KxL {
            k,
            l,
            values: vec![1.0 / k as f64; k * l],
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.0.k
    }

    pub fn num_layers(&self) -> usize {
        self.0.l
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.0.get(k, l)
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        self.0.column(l)
    }

    /// Row-major `K x L` values.
    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// Values laid out layer by layer (`L x K` row-major), the order the
    /// differentiable models consume.
    pub fn layer_major(&self) -> Vec<f64> {
        let (k, l) = (self.0.k, self.0.l);
        let mut out = Vec::with_capacity(k * l);
        for li in 0..l {
            for ki in 0..k {
                out.push(self.get(ki, li));
            }
        }
        out
    }

    /// Inverse of [`ArchMatrix::layer_major`].
    pub fn from_layer_major(k: usize, l: usize, values: &[f64]) -> Result<Self> {
        if values.len() != k * l {
            return Err(Error::ShapeMismatch(format!(
                "{k}x{l} matrix needs {} values, got {}",
                k * l,
                values.len()
            )));
        }
        let mut out = vec![0.0; k * l];
        for li in 0..l {
            for ki in 0..k {
                out[ki * l + li] = values[li * k + ki];
            }
        }
        Self::from_vec_unchecked(k, l, out)
    }

    /// `alpha * a + (1 - alpha) * b`.
    pub fn blend(alpha: f64, a: &ArchMatrix, b: &ArchMatrix) -> Result<Self> {
        if a.0.k != b.0.k || a.0.l != b.0.l {
            return Err(Error::ShapeMismatch("blending matrices of different shapes".into()));
        }
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        Self::from_vec_unchecked(a.0.k, a.0.l, values)
    }

    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let (k, l) = (self.0.k, self.0.l);
        if self.0.values.len() != k * l {
            return Err(Violation::Shape {
                expected: k * l,
                found: self.0.values.len(),
            });
        }
        for li in 0..l {
            let mut sum = 0.0;
            for ki in 0..k {
                let v = self.get(ki, li);
                if !v.is_finite() {
                    return Err(Violation::NonFinite { k: ki, l: li });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Violation::Range { k: ki, l: li, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Violation::ColumnSum { l: li, sum });
            }
        }
        Ok(())
    }

    /// Argmax of every column; ties go to the lowest index.
    pub fn discretize(&self) -> DiscreteArch {
        discretize(self)
    }
}

/// Column `l` is the unit vector at `arch.ops()[l]`.
pub fn one_hot(arch: &DiscreteArch, space: &SearchSpaceSpec) -> Result<ArchMatrix> {
    arch.check_for(space)?;
    Ok(one_hot_unchecked(arch, space.num_candidates()))
}

pub(crate) fn one_hot_unchecked(arch: &DiscreteArch, k: usize) -> ArchMatrix {
    let l = arch.len();
    let mut values = vec![0.0; k * l];
    for (li, &op) in arch.ops().iter().enumerate() {
        values[op * l + li] = 1.0;
    }
    ArchMatrix(KxL { k, l, values })
}

/// Column-wise softmax with max subtraction.
pub fn relax(logits: &ArchLogits) -> Result<ArchMatrix> {
    let (k, l) = (logits.0.k, logits.0.l);
    if let Some(i) = logits.0.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite logit at ({}, {})",
            i / l.max(1),
            i % l.max(1)
        )));
    }
    let mut values = vec![0.0; k * l];
    for li in 0..l {
        let col = logits.0.column(li);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (ki, e) in exps.into_iter().enumerate() {
            values[ki * l + li] = e / z;
        }
    }
    Ok(ArchMatrix(KxL { k, l, values }))
}

/// Pulls a gradient with respect to `relax(logits)` back to the logits
/// through the column softmax Jacobian.
pub fn relax_backward(relaxed: &ArchMatrix, grad: &ArchMatrix) -> Result<ArchLogits> {
    let (k, l) = (relaxed.0.k, relaxed.0.l);
    if grad.0.k != k || grad.0.l != l {
        return Err(Error::ShapeMismatch("gradient shape differs from matrix".into()));
    }
    let mut out = vec![0.0; k * l];
    for li in 0..l {
        let dot: f64 = (0..k).map(|ki| relaxed.get(ki, li) * grad.get(ki, li)).sum();
        for ki in 0..k {
            out[ki * l + li] = relaxed.get(ki, li) * (grad.get(ki, li) - dot);
        }
    }
    ArchLogits::from_vec(k, l, out)
}

pub fn discretize(m: &ArchMatrix) -> DiscreteArch {
    let ops = (0..m.num_layers())
        .map(|l| {
            let mut best = 0;
            for k in 1..m.num_candidates() {
                if m.get(k, l) > m.get(best, l) {
                    best = k;
                }
            }
            best
        })
        .collect();
    DiscreteArch(ops)
}

/// `n` architectures with every layer drawn uniformly from the catalog.
pub fn sample_uniform(space: &SearchSpaceSpec, n: usize, seed: u64) -> Vec<DiscreteArch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = space.num_candidates();
    (0..n)
        .map(|_| DiscreteArch((0..space.num_layers()).map(|_| rng.random_range(0..k)).collect()))
        .collect()
}

pub fn validate(m: &ArchMatrix) -> std::result::Result<(), Violation> {
    m.validate()
}
