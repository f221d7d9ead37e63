use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::TaskSplit;
use crate::archspace::{ArchLogits, ArchMatrix, BlockKind, DiscreteArch, SearchSpaceSpec};
use crate::diffcore::{finite_diff_check, Bindings, Graph, Mode, NodeId, Tensor};
use crate::{Error, Result};

/// Every candidate block of every layer, plus the stem, the head and the
/// architecture logits.
#[derive(Debug, Clone)]
pub struct Supernet {
    space: SearchSpaceSpec,
    params: Bindings,
    pub arch_logits: ArchLogits,
}

/// Which leaves a graph differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Grads {
    /// Network weights (the head too unless frozen).
    Weights { freeze_head: bool },
    /// The architecture matrix only.
    Arch,
}

pub(crate) struct Net {
    pub graph: Graph,
    pub scores: NodeId,
    pub loss: NodeId,
}

fn block_param(l: usize, k: usize, part: &str) -> String {
    format!("l{l}.b{k}.{part}")
}

impl Supernet {
    /// Glorot-uniform weights, zero biases, architecture logits at zero.
    pub fn init(space: &SearchSpaceSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |out: usize, inp: usize| {
            let a = (6.0 / (out + inp) as f64).sqrt();
            Tensor::new(
                vec![out, inp],
                (0..out * inp).map(|_| rng.random_range(-a..a)).collect(),
            )
            .expect("sized")
        };
        let (d, h, c) = (space.input_dim(), space.hidden_width(), space.num_classes());
        let mut p = Bindings::new();
        p.insert("stem.w".into(), glorot(h, d));
        p.insert("stem.b".into(), Tensor::zeros(vec![h]));
        for l in 0..space.num_layers() {
            for (k, block) in space.catalog().iter().enumerate() {
                match block.kind {
                    BlockKind::FullDense => {
                        p.insert(block_param(l, k, "w"), glorot(h, h));
                        p.insert(block_param(l, k, "b"), Tensor::zeros(vec![h]));
                    }
                    BlockKind::LowRank { rank } => {
                        p.insert(block_param(l, k, "down"), glorot(rank, h));
                        p.insert(block_param(l, k, "up"), glorot(h, rank));
                        p.insert(block_param(l, k, "b"), Tensor::zeros(vec![h]));
                    }
                    BlockKind::Identity | BlockKind::Zero => {}
                }
            }
        }
        p.insert("head.w".into(), glorot(c, h));
        p.insert("head.b".into(), Tensor::zeros(vec![c]));
        Self {
            space: space.clone(),
            params: p,
            arch_logits: ArchLogits::zeros(space.num_candidates(), space.num_layers()),
        }
    }

    pub fn space(&self) -> &SearchSpaceSpec {
        &self.space
    }

    pub fn params(&self) -> &Bindings {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Bindings {
        &mut self.params
    }

    /// Zeroes the head so every input scores the same.
    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            self.params.get_mut(name).expect("present").data_mut().fill(0.0);
        }
    }

    /// The supernet as a graph over `x` (`[n, d]`), `labels` (`[n]`) and,
    /// unless `discrete` fixes the blocks, `arch` (`[K, L]`).
    pub(crate) fn net(&self, discrete: Option<&DiscreteArch>, grads: Grads) -> Net {
        let mut g = Graph::new();
        let weights_grad = matches!(grads, Grads::Weights { .. });
        let w = |g: &mut Graph, name: String| if weights_grad { g.param(name) } else { g.input(name) };
        let x = g.input("x");
        let labels = g.input("labels");
        let arch = match (discrete, grads) {
            (Some(_), _) => None,
            (None, Grads::Arch) => Some(g.param("arch")),
            (None, _) => Some(g.input("arch")),
        };
        let (sw, sb) = (w(&mut g, "stem.w".into()), w(&mut g, "stem.b".into()));
        let mut h = g.affine(x, sw, Some(sb));
        for l in 0..self.space.num_layers() {
            let branch = |g: &mut Graph, k: usize| -> Option<NodeId> {
                match self.space.block(k).kind {
                    BlockKind::FullDense => {
                        let (wt, b) = (w(g, block_param(l, k, "w")), w(g, block_param(l, k, "b")));
                        let y = g.affine(h, wt, Some(b));
                        Some(g.relu(y))
                    }
                    BlockKind::LowRank { .. } => {
                        let down = w(g, block_param(l, k, "down"));
                        let (up, b) = (w(g, block_param(l, k, "up")), w(g, block_param(l, k, "b")));
                        let z = g.affine(h, down, None);
                        let y = g.affine(z, up, Some(b));
                        Some(g.relu(y))
                    }
                    BlockKind::Identity => Some(h),
                    BlockKind::Zero => None,
                }
            };
            h = match (discrete, arch) {
                (Some(a), _) => match branch(&mut g, a.ops()[l]) {
                    Some(y) => y,
                    None => {
                        // The zero block: a mix with all weight on nothing.
                        let zero = g.input("zero_arch");
                        g.weighted_mix(zero, 0, vec![Some(h)])
                    }
                },
                (None, Some(arch)) => {
                    let branches = (0..self.space.num_candidates()).map(|k| branch(&mut g, k)).collect();
                    g.weighted_mix(arch, l, branches)
                }
                (None, None) => unreachable!("relaxed graphs always bind an architecture"),
            };
        }
        let head_grad = matches!(grads, Grads::Weights { freeze_head: false });
        let head = |g: &mut Graph, name: &str| if head_grad { g.param(name) } else { g.input(name) };
        let (hw, hb) = (head(&mut g, "head.w"), head(&mut g, "head.b"));
        let scores = g.affine(h, hw, Some(hb));
        let loss = g.cross_entropy(scores, labels);
        Net { graph: g, scores, loss }
    }

    pub(crate) fn bind(&self, x: Vec<f64>, labels: Vec<f64>, arch: Option<&ArchMatrix>) -> Bindings {
        let n = labels.len();
        let mut b = self.params.clone();
        b.insert(
            "x".into(),
            Tensor::new(vec![n, self.space.input_dim()], x).expect("sized"),
        );
        b.insert("labels".into(), Tensor::vector(labels));
        if let Some(m) = arch {
            let t = Tensor::new(vec![m.num_candidates(), m.num_layers()], m.values().to_vec()).expect("sized");
            b.insert("arch".into(), t);
        }
        b.insert("zero_arch".into(), Tensor::zeros(vec![1, 1]));
        b
    }

    /// Class scores of `x` (`[n, d]`) under the relaxed architecture `m`.
    pub fn forward(&self, x: &[f64], m: &ArchMatrix) -> Result<Vec<f64>> {
        if m.num_candidates() != self.space.num_candidates() || m.num_layers() != self.space.num_layers() {
            return Err(Error::ShapeMismatch(
                "architecture matrix does not match the supernet".into(),
            ));
        }
        let d = self.space.input_dim();
        if !x.len().is_multiple_of(d) {
            return Err(Error::ShapeMismatch(format!("{} inputs are not rows of {d}", x.len())));
        }
        let n = x.len() / d;
        let net = self.net(None, Grads::Arch);
        let ev = net
            .graph
            .forward(&self.bind(x.to_vec(), vec![0.0; n], Some(m)), Mode::Eval)?;
        Ok(ev.value(net.scores).data().to_vec())
    }

    /// Class scores of the discrete network that keeps only the blocks in
    /// `arch`.
    pub fn forward_discrete(&self, x: &[f64], arch: &DiscreteArch) -> Result<Vec<f64>> {
        arch.check_for(&self.space)?;
        let n = x.len() / self.space.input_dim();
        let net = self.net(Some(arch), Grads::Arch);
        let ev = net
            .graph
            .forward(&self.bind(x.to_vec(), vec![0.0; n], None), Mode::Eval)?;
        Ok(ev.value(net.scores).data().to_vec())
    }

    /// Central-difference check of the cross-entropy gradient with respect
    /// to the relaxed architecture matrix, on the samples of `split`.
    pub fn arch_grad_check(&self, split: &TaskSplit, m: &ArchMatrix, eps: f64) -> Result<f64> {
        let idx: Vec<usize> = (0..split.len()).collect();
        let (x, y) = split.gather(&idx, self.space.input_dim());
        let net = self.net(None, Grads::Arch);
        finite_diff_check(&net.graph, &self.bind(x, y, Some(m)), net.loss, Mode::Eval, eps)
    }
}

/// Mean cross-entropy and accuracy of a graph over a whole split.
pub(crate) fn score_split(
    net: &Supernet,
    graph: &Net,
    split: &TaskSplit,
    arch: Option<&ArchMatrix>,
) -> Result<(f64, f64)> {
    let d = net.space.input_dim();
    let idx: Vec<usize> = (0..split.len()).collect();
    let (x, y) = split.gather(&idx, d);
    let ev = graph.graph.forward(&net.bind(x, y, arch), Mode::Eval)?;
    let loss = ev.value(graph.loss).item()?;
    let c = net.space.num_classes();
    let correct = ev
        .value(graph.scores)
        .data()
        .chunks(c)
        .zip(&split.y)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok((loss, correct as f64 / split.len().max(1) as f64))
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
