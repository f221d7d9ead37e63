use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::archspace::{ArchMatrix, DiscreteArch};
use crate::diffcore::{finite_diff_check, Bindings, Graph, Mode, NodeId, Tensor};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "ehdnas-hwloss-v1";

const EMB: &str = "emb";
const FC: [(&str, &str); 3] = [("fc1.w", "fc1.b"), ("fc2.w", "fc2.b"), ("fc3.w", "fc3.b")];

/// Maps model outputs back to milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl Scaler {
    /// Mean and population standard deviation of `targets`. A zero spread
    /// falls back to a thousandth of the mean (or 1) so the scale stays
    /// positive.
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len().max(1) as f64;
        let mean_ms = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean_ms).powi(2)).sum::<f64>() / n;
        let mut std_ms = var.sqrt();
        if std_ms <= 0.0 {
            std_ms = if mean_ms != 0.0 { mean_ms.abs() * 1e-3 } else { 1.0 };
        }
        Self { mean_ms, std_ms }
    }

    pub fn normalize(&self, ms: f64) -> f64 {
        (ms - self.mean_ms) / self.std_ms
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std_ms + self.mean_ms
    }
}

/// Embedding matrices plus the MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct HwLossModel {
    k: usize,
    l: usize,
    e: usize,
    h1: usize,
    h2: usize,
    dropout_p: f64,
    scaler: Scaler,
    params: Bindings,
}

/// Node handles of a predictor graph.
pub(crate) struct Net {
    pub graph: Graph,
    pub pred: NodeId,
    pub loss: NodeId,
}

impl HwLossModel {
    /// Glorot-uniform initialisation of every weight, zero biases.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        k: usize,
        l: usize,
        embedding_size: usize,
        h1: usize,
        h2: usize,
        dropout_p: f64,
        scaler: Scaler,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || l == 0 || embedding_size == 0 || h1 == 0 || h2 == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::InvalidConfig(format!("dropout_p {dropout_p} outside [0, 1)")));
        }
        if !(scaler.std_ms > 0.0 && scaler.std_ms.is_finite() && scaler.mean_ms.is_finite()) {
            return Err(Error::InvalidConfig(
                "scaler needs a finite mean and positive std".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("sized")
        };
        let mut params = Bindings::new();
        params.insert(EMB.into(), glorot(vec![l, embedding_size, k], k, embedding_size));
        let dims = [(embedding_size * l, h1), (h1, h2), (h2, 1)];
        for ((w, b), (din, dout)) in FC.iter().zip(dims) {
            params.insert((*w).into(), glorot(vec![dout, din], din, dout));
            params.insert((*b).into(), Tensor::zeros(vec![dout]));
        }
        Ok(Self {
            k,
            l,
            e: embedding_size,
            h1,
            h2,
            dropout_p,
            scaler,
            params,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.k
    }

    pub fn num_layers(&self) -> usize {
        self.l
    }

    pub fn embedding_size(&self) -> usize {
        self.e
    }

    pub fn hidden_sizes(&self) -> (usize, usize) {
        (self.h1, self.h2)
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn scaler(&self) -> Scaler {
        self.scaler
    }

    pub fn params(&self) -> &Bindings {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Bindings {
        &mut self.params
    }

    /// `W_l` of layer `l`, row-major `E x K`.
    pub fn embedding(&self, l: usize) -> &[f64] {
        &self.params[EMB].data()[l * self.e * self.k..(l + 1) * self.e * self.k]
    }

    /// Zeroes the output layer, making every prediction the scaler mean.
    pub fn zero_output_layer(&mut self) {
        for name in [FC[2].0, FC[2].1] {
            self.params.get_mut(name).expect("present").data_mut().fill(0.0);
        }
    }

    /// The predictor as a graph over `arch` (`[n, L*K]`, layer-major rows)
    /// and, for training, `target` (`[n, 1]`, normalised). With `arch_grad`
    /// the architecture is the only differentiable leaf.
    pub(crate) fn net(&self, arch_grad: bool) -> Net {
        let mut g = Graph::new();
        let leaf = |g: &mut Graph, name: &str| if arch_grad { g.input(name) } else { g.param(name) };
        let arch = if arch_grad { g.param("arch") } else { g.input("arch") };
        let emb = leaf(&mut g, EMB);
        let mut h = g.embedding_apply(emb, arch);
        for (i, (w, b)) in FC.iter().enumerate() {
            let (w, b) = (leaf(&mut g, w), leaf(&mut g, b));
            if i == 2 && self.dropout_p > 0.0 {
                h = g.dropout(h, self.dropout_p);
            }
            h = g.affine(h, w, Some(b));
            if i < 2 {
                h = g.relu(h);
            }
        }
        let target = g.input("target");
        let loss = g.mae(h, target);
        Net {
            graph: g,
            pred: h,
            loss,
        }
    }

    pub(crate) fn check_shape(&self, m: &ArchMatrix) -> Result<()> {
        if m.num_candidates() != self.k || m.num_layers() != self.l {
            return Err(Error::MismatchedSpace {
                model_k: self.k,
                model_l: self.l,
                space_k: m.num_candidates(),
                space_l: m.num_layers(),
            });
        }
        Ok(())
    }

    /// Bindings for `rows` layer-major architecture rows.
    pub(crate) fn bind(&self, rows: Vec<f64>, n: usize, target: Option<Vec<f64>>) -> Bindings {
        let mut b = self.params.clone();
        b.insert(
            "arch".into(),
            Tensor::new(vec![n, self.l * self.k], rows).expect("sized"),
        );
        let target = target.unwrap_or_else(|| vec![0.0; n]);
        b.insert("target".into(), Tensor::new(vec![n, 1], target).expect("sized"));
        b
    }

    /// Normalised predictions for a batch of architectures, eval mode.
    pub(crate) fn forward_rows(&self, net: &Net, rows: Vec<f64>, n: usize) -> Result<Vec<f64>> {
        let ev = net.graph.forward(&self.bind(rows, n, None), Mode::Eval)?;
        Ok(ev.value(net.pred).data().to_vec())
    }

    /// Predictions in ms for discrete architectures.
    pub fn predict_discrete(&self, archs: &[DiscreteArch]) -> Result<Vec<f64>> {
        let width = self.l * self.k;
        let mut rows = vec![0.0; archs.len() * width];
        for (i, a) in archs.iter().enumerate() {
            a.check(self.k, self.l)?;
            for (li, &op) in a.ops().iter().enumerate() {
                rows[i * width + li * self.k + op] = 1.0;
            }
        }
        let net = self.net(false);
        let out = self.forward_rows(&net, rows, archs.len())?;
        Ok(out.into_iter().map(|z| self.scaler.denormalize(z)).collect())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            k: self.k,
            l: self.l,
            e: self.e,
            h1: self.h1,
            h2: self.h2,
            dropout_p: self.dropout_p,
            scaler: self.scaler,
            embeddings: (0..self.l).map(|l| self.embedding(l).to_vec()).collect(),
            fc: FC
                .iter()
                .map(|(w, b)| {
                    let wt = &self.params[*w];
                    FcFile {
                        out_features: wt.shape()[0],
                        in_features: wt.shape()[1],
                        w: wt.data().to_vec(),
                        b: self.params[*b].data().to_vec(),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Tag {
            format: String,
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        };
        let tag: Tag = serde_json::from_str(text).map_err(parse_err)?;
        if tag.format != MODEL_FORMAT {
            return Err(Error::VersionMismatch {
                expected: MODEL_FORMAT.into(),
                found: tag.format,
            });
        }
        let f: ModelFile = serde_json::from_str(text).map_err(parse_err)?;
        let mut model = HwLossModel::init(f.k, f.l, f.e, f.h1, f.h2, f.dropout_p, f.scaler, 0)?;
        let shape_err = |what: &str| Error::Parse {
            line: 0,
            message: format!("{what} has the wrong shape"),
        };
        if f.embeddings.len() != f.l || f.embeddings.iter().any(|w| w.len() != f.e * f.k) {
            return Err(shape_err("embeddings"));
        }
        model
            .params
            .insert(EMB.into(), Tensor::new(vec![f.l, f.e, f.k], f.embeddings.concat())?);
        if f.fc.len() != 3 {
            return Err(shape_err("fc"));
        }
        for ((w, b), layer) in FC.iter().zip(f.fc) {
            let expected = model.params[*w].shape().to_vec();
            if expected != [layer.out_features, layer.in_features]
                || layer.w.len() != layer.out_features * layer.in_features
                || layer.b.len() != layer.out_features
            {
                return Err(shape_err(w));
            }
            model.params.insert((*w).into(), Tensor::new(expected, layer.w)?);
            model.params.insert((*b).into(), Tensor::vector(layer.b));
        }
        if model.params.values().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Parse {
                line: 0,
                message: "non-finite parameter".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Writes every value with 17 significant digits.
fn digits17<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let body: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    let raw = RawValue::from_string(format!("[{}]", body.join(","))).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

fn digits17_rows<S: Serializer>(rows: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let body: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "[{}]",
                r.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
            )
        })
        .collect();
    let raw = RawValue::from_string(format!("[{}]", body.join(","))).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

#[derive(Serialize, Deserialize)]
struct FcFile {
    out_features: usize,
    in_features: usize,
    #[serde(serialize_with = "digits17")]
    w: Vec<f64>,
    #[serde(serialize_with = "digits17")]
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "E")]
    e: usize,
    h1: usize,
    h2: usize,
    dropout_p: f64,
    scaler: Scaler,
    /// One row-major `E x K` matrix per layer.
    #[serde(serialize_with = "digits17_rows")]
    embeddings: Vec<Vec<f64>>,
    fc: Vec<FcFile>,
}

/// `Concat(W_1 a^(1), ..., W_L a^(L))`. Shapes are checked, the simplex
/// constraints are not.
pub fn embed(model: &HwLossModel, m: &ArchMatrix) -> Result<Vec<f64>> {
    model.check_shape(m)?;
    let (k, e) = (model.k, model.e);
    let mut out = Vec::with_capacity(model.l * e);
    for l in 0..model.l {
        let w = model.embedding(l);
        let col = m.column(l);
        out.extend((0..e).map(|ei| {
            w[ei * k..(ei + 1) * k]
                .iter()
                .zip(&col)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        }));
    }
    Ok(out)
}

/// Predicted latency in ms, dropout off.
pub fn predict(model: &HwLossModel, m: &ArchMatrix) -> Result<f64> {
    model.check_shape(m)?;
    let net = model.net(false);
    let z = model.forward_rows(&net, m.layer_major(), 1)?[0];
    Ok(model.scaler.denormalize(z))
}

/// Prediction (ms) and its exact gradient with respect to every entry of
/// `m`, as a `K x L` matrix.
pub(crate) fn value_and_grad(model: &HwLossModel, m: &ArchMatrix) -> Result<(f64, ArchMatrix)> {
    model.check_shape(m)?;
    let net = model.net(true);
    let b = model.bind(m.layer_major(), 1, None);
    let ev = net.graph.forward(&b, Mode::Eval)?;
    let z = ev.value(net.pred).item()?;
    let g = ev.backward(net.pred)?.remove("arch").expect("arch is a parameter");
    let scaled: Vec<f64> = g.data().iter().map(|v| v * model.scaler.std_ms).collect();
    let grad = ArchMatrix::from_layer_major(model.k, model.l, &scaled)?;
    Ok((model.scaler.denormalize(z), grad))
}

/// `d predict / d m`, dropout off.
pub fn grad_arch(model: &HwLossModel, m: &ArchMatrix) -> Result<ArchMatrix> {
    value_and_grad(model, m).map(|(_, g)| g)
}

/// Central-difference check of [`grad_arch`] at `m`, on the normalised
/// output so the tolerance does not depend on the latency scale.
pub fn grad_arch_check(model: &HwLossModel, m: &ArchMatrix, eps: f64) -> Result<f64> {
    model.check_shape(m)?;
    let net = model.net(true);
    let mut b = model.bind(m.layer_major(), 1, None);
    let z = net.graph.forward(&b, Mode::Eval)?.value(net.pred).item()?;
    // Keep the unused MAE residual away from zero so it never registers as
    // a kink.
    b.insert("target".into(), Tensor::new(vec![1, 1], vec![z - 1e6])?);
    finite_diff_check(&net.graph, &b, net.pred, Mode::Eval, eps)
}
