use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::{Error, Result};

pub type Bindings = BTreeMap<String, Tensor>;
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// Dropout behaviour for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Masks are drawn from `seed`, one independent stream per dropout node.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        name: String,
        requires_grad: bool,
    },
    /// `x[n, in] * w[out, in]^T + b[out]`.
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Relu(NodeId),
    /// Softmax over the last axis of a matrix.
    Softmax(NodeId),
    /// Mean cross-entropy of row logits against class indices stored as
    /// reals.
    CrossEntropy {
        logits: NodeId,
        labels: NodeId,
    },
    Dropout {
        x: NodeId,
        p: f64,
    },
    /// Mean absolute error over all elements.
    Mae {
        pred: NodeId,
        target: NodeId,
    },
    /// `sum_k arch[k, layer] * branch_k`; `None` branches are the zero
    /// operation and contribute nothing.
    WeightedMix {
        arch: NodeId,
        layer: usize,
        branches: Vec<Option<NodeId>>,
    },
    /// `emb[L, E, K]` applied per layer to `arch[n, L*K]`, giving `[n, L*E]`.
    EmbeddingApply {
        emb: NodeId,
        arch: NodeId,
    },
}

/// Static computation graph. Nodes are appended in topological order, so
/// every node's inputs precede it.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    /// A bound value no gradient is requested for.
    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Leaf {
            name: name.into(),
            requires_grad: false,
        })
    }

    /// A bound value [`Evaluation::backward`] reports a gradient for.
    pub fn param(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Leaf {
            name: name.into(),
            requires_grad: true,
        })
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        self.push(Op::Affine { x, w, b })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax(x))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        self.push(Op::CrossEntropy { logits, labels })
    }

    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        self.push(Op::Dropout { x, p })
    }

    pub fn mae(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        self.push(Op::Mae { pred, target })
    }

    pub fn weighted_mix(&mut self, arch: NodeId, layer: usize, branches: Vec<Option<NodeId>>) -> NodeId {
        self.push(Op::WeightedMix { arch, layer, branches })
    }

    pub fn embedding_apply(&mut self, emb: NodeId, arch: NodeId) -> NodeId {
        self.push(Op::EmbeddingApply { emb, arch })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the leaves gradients are reported for.
    pub fn param_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|op| match op {
                Op::Leaf {
                    name,
                    requires_grad: true,
                } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn forward(&self, bindings: &Bindings, mode: Mode) -> Result<Evaluation<'_>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut masks: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (i, op) in self.nodes.iter().enumerate() {
            let v = |id: NodeId| -> &Tensor { &values[id.0] };
            let out = match op {
                Op::Leaf { name, .. } => bindings
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::ShapeMismatch(format!("missing binding {name:?}")))?,
                Op::Affine { x, w, b } => affine_forward(v(*x), v(*w), b.map(&v))?,
                Op::Relu(x) => {
                    let x = v(*x);
                    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&a| a.max(0.0)).collect())?
                }
                Op::Softmax(x) => softmax_rows(v(*x))?,
                Op::CrossEntropy { logits, labels } => cross_entropy_forward(v(*logits), v(*labels))?,
                Op::Dropout { x, p } => {
                    let x = v(*x);
                    match mode {
                        Mode::Eval => x.clone(),
                        Mode::Train { seed } => {
                            let mask = dropout_mask(seed, i, x.len(), *p);
                            let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                            masks.insert(i, mask);
                            Tensor::new(x.shape().to_vec(), data)?
                        }
                    }
                }
                Op::Mae { pred, target } => {
                    let (p, t) = (v(*pred), v(*target));
                    same_len(p, t, "MAE")?;
                    let n = p.len().max(1) as f64;
                    Tensor::scalar(p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
                }
                Op::WeightedMix { arch, layer, branches } => {
                    let a = v(*arch);
                    let (k, l) = a.rows_cols()?;
                    check_mix(k, l, *layer, branches.len())?;
                    let shape = branches
                        .iter()
                        .flatten()
                        .next()
                        .map(|b| v(*b).shape().to_vec())
                        .ok_or_else(|| Error::ShapeMismatch("mix needs a non-zero branch".into()))?;
                    let mut out = Tensor::zeros(shape);
                    for (ki, br) in branches.iter().enumerate() {
                        if let Some(br) = br {
                            let bv = v(*br);
                            if bv.shape() != out.shape() {
                                return Err(Error::ShapeMismatch("mixed branches differ in shape".into()));
                            }
                            let w = a.data()[ki * l + layer];
                            for (o, x) in out.data_mut().iter_mut().zip(bv.data()) {
                                *o += w * x;
                            }
                        }
                    }
                    out
                }
                Op::EmbeddingApply { emb, arch } => embedding_forward(v(*emb), v(*arch))?,
            };
            if out.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite value at node {i} ({})",
                    op_name(op)
                )));
            }
            values.push(out);
        }
        Ok(Evaluation {
            graph: self,
            values,
            masks,
        })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Affine { .. } => "affine",
        Op::Relu(_) => "relu",
        Op::Softmax(_) => "softmax",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Dropout { .. } => "dropout",
        Op::Mae { .. } => "mae",
        Op::WeightedMix { .. } => "weighted_mix",
        Op::EmbeddingApply { .. } => "embedding_apply",
    }
}

fn same_len(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what} operands have {} and {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_mix(k: usize, l: usize, layer: usize, branches: usize) -> Result<()> {
    if branches != k || layer >= l {
        return Err(Error::ShapeMismatch(format!(
            "mix of {branches} branches at layer {layer} against a {k}x{l} architecture"
        )));
    }
    Ok(())
}

fn dropout_mask(seed: u64, node: usize, n: usize, p: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn affine_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, din) = x.rows_cols()?;
    let (dout, win) = w.rows_cols()?;
    if win != din {
        return Err(Error::ShapeMismatch(format!(
            "affine weight is {dout}x{win} but input rows have {din} features"
        )));
    }
    let mut out = vec![0.0; n * dout];
    if let Some(b) = b {
        if b.len() != dout {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} values, expected {dout}",
                b.len()
            )));
        }
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    matmul_bt_acc(x.data(), w.data(), &mut out, n, din, dout);
    Tensor::new(vec![n, dout], out)
}

fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, c) = x.rows_cols()?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn class_index(label: f64, c: usize) -> Result<usize> {
    if label >= 0.0 && label.fract() == 0.0 && (label as usize) < c {
        Ok(label as usize)
    } else {
        Err(Error::ShapeMismatch(format!(
            "label {label} is not a class index below {c}"
        )))
    }
}

fn cross_entropy_forward(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (n, c) = logits.rows_cols()?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(c).zip(labels.data()) {
        let y = class_index(y, c)?;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(Tensor::scalar(total / n.max(1) as f64))
}

fn embedding_dims(emb: &Tensor, arch: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let [l, e, k] = emb.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "embedding must be [L, E, K], got {:?}",
            emb.shape()
        )));
    };
    let (n, cols) = arch.rows_cols()?;
    if cols != l * k {
        return Err(Error::ShapeMismatch(format!(
            "architecture rows have {cols} values, embedding expects {l}x{k}"
        )));
    }
    Ok((n, *l, *e, *k))
}

fn embedding_forward(emb: &Tensor, arch: &Tensor) -> Result<Tensor> {
    let (n, l, e, k) = embedding_dims(emb, arch)?;
    let mut out = vec![0.0; n * l * e];
    for i in 0..n {
        for li in 0..l {
            let a = &arch.data()[i * l * k + li * k..][..k];
            let w = &emb.data()[li * e * k..][..e * k];
            let o = &mut out[i * l * e + li * e..][..e];
            for (ei, ov) in o.iter_mut().enumerate() {
                *ov = w[ei * k..(ei + 1) * k].iter().zip(a).map(|(x, y)| x * y).sum();
            }
        }
    }
    Tensor::new(vec![n, l * e], out)
}

/// Values of every node from one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation<'g> {
    graph: &'g Graph,
    values: Vec<Tensor>,
    masks: BTreeMap<usize, Vec<f64>>,
}

impl Evaluation<'_> {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Sign pattern of every relu input and MAE residual. Two points with
    /// the same signature lie in the same smooth piece of the graph.
    pub(crate) fn kink_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for op in &self.graph.nodes {
            match op {
                Op::Relu(x) => sig.extend(self.values[x.0].data().iter().map(|&v| sign(v))),
                Op::Mae { pred, target } => sig.extend(
                    self.values[pred.0]
                        .data()
                        .iter()
                        .zip(self.values[target.0].data())
                        .map(|(p, t)| sign(p - t)),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Reverse-mode gradients of the scalar `loss` for every
    /// [`Graph::param`] leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "loss must be a scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = &self.graph.nodes[i];
            let mut acc = |id: NodeId, t: Tensor| match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match op {
                Op::Leaf { name, requires_grad } => {
                    if *requires_grad {
                        match out.get_mut(name) {
                            Some(existing) => existing.add_assign(&g),
                            None => {
                                out.insert(name.clone(), g);
                            }
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (&self.values[x.0], &self.values[w.0]);
                    let (n, din) = xv.rows_cols()?;
                    let (dout, _) = wv.rows_cols()?;
                    let mut dx = vec![0.0; n * din];
                    matmul_acc(g.data(), wv.data(), &mut dx, n, dout, din);
                    let mut dw = vec![0.0; dout * din];
                    matmul_at_acc(g.data(), xv.data(), &mut dw, n, dout, din);
                    if let Some(b) = b {
                        let mut db = vec![0.0; dout];
                        for row in g.data().chunks(dout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        acc(*b, Tensor::new(self.values[b.0].shape().to_vec(), db)?);
                    }
                    acc(*w, Tensor::new(vec![dout, din], dw)?);
                    acc(*x, Tensor::new(vec![n, din], dx)?);
                }
                Op::Relu(x) => {
                    let xv = &self.values[x.0];
                    let d = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(*x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::Softmax(x) => {
                    let s = &self.values[i];
                    let (_, c) = s.rows_cols()?;
                    let mut d = vec![0.0; s.len()];
                    for ((drow, srow), grow) in d.chunks_mut(c).zip(s.data().chunks(c)).zip(g.data().chunks(c)) {
                        let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((dv, sv), gv) in drow.iter_mut().zip(srow).zip(grow) {
                            *dv = sv * (gv - dot);
                        }
                    }
                    acc(*x, Tensor::new(s.shape().to_vec(), d)?);
                }
                Op::CrossEntropy { logits, labels } => {
                    let probs = softmax_rows(&self.values[logits.0])?;
                    let (n, c) = probs.rows_cols()?;
                    let scale = g.item()? / n.max(1) as f64;
                    let mut d = probs.into_data();
                    for (row, &y) in d.chunks_mut(c).zip(self.values[labels.0].data()) {
                        row[class_index(y, c)?] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    acc(*logits, Tensor::new(vec![n, c], d)?);
                }
                Op::Dropout { x, .. } => {
                    let d = match self.masks.get(&i) {
                        Some(mask) => {
                            let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                            Tensor::new(g.shape().to_vec(), data)?
                        }
                        None => g,
                    };
                    acc(*x, d);
                }
                Op::Mae { pred, target } => {
                    let (p, t) = (&self.values[pred.0], &self.values[target.0]);
                    let scale = g.item()? / p.len().max(1) as f64;
                    let d: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(a, b)| scale * sign(a - b) as f64)
                        .collect();
                    let neg = d.iter().map(|v| -v).collect();
                    acc(*target, Tensor::new(t.shape().to_vec(), neg)?);
                    acc(*pred, Tensor::new(p.shape().to_vec(), d)?);
                }
                Op::WeightedMix { arch, layer, branches } => {
                    let a = &self.values[arch.0];
                    let (k, l) = a.rows_cols()?;
                    let mut da = Tensor::zeros(vec![k, l]);
                    for (ki, br) in branches.iter().enumerate() {
                        if let Some(br) = br {
                            let bv = &self.values[br.0];
                            da.data_mut()[ki * l + layer] = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
                            let w = a.data()[ki * l + layer];
                            acc(
                                *br,
                                Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| w * x).collect())?,
                            );
                        }
                    }
                    acc(*arch, da);
                }
                Op::EmbeddingApply { emb, arch } => {
                    let (ev, av) = (&self.values[emb.0], &self.values[arch.0]);
                    let (n, l, e, k) = embedding_dims(ev, av)?;
                    let mut de = vec![0.0; l * e * k];
                    let mut da = vec![0.0; n * l * k];
                    for si in 0..n {
                        for li in 0..l {
                            let a = &av.data()[si * l * k + li * k..][..k];
                            let go = &g.data()[si * l * e + li * e..][..e];
                            let w = &ev.data()[li * e * k..][..e * k];
                            let dw = &mut de[li * e * k..][..e * k];
                            let dav = &mut da[si * l * k + li * k..][..k];
                            for (ei, &gv) in go.iter().enumerate() {
                                for ki in 0..k {
                                    dw[ei * k + ki] += gv * a[ki];
                                    dav[ki] += gv * w[ei * k + ki];
                                }
                            }
                        }
                    }
                    acc(*emb, Tensor::new(ev.shape().to_vec(), de)?);
                    acc(*arch, Tensor::new(av.shape().to_vec(), da)?);
                }
            }
        }
        Ok(out)
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}
