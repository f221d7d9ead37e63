use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use super::supernet::{score_split, Grads, Supernet};
use super::task::TaskData;
use crate::archspace::{relax, relax_backward, ArchMatrix, DiscreteArch, SearchSpaceSpec};
use crate::diffcore::{Bindings, Mode, Tensor};
use crate::hwloss::HwLossModel;
use crate::optim::{Adam, Sgd};
use crate::perfmodel::{benchmark_generic, lut_latency, HardwareBudget, Lut};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HwKind {
    Deep,
    Lut,
    None,
}

impl std::str::FromStr for HwKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep" => Ok(HwKind::Deep),
            "lut" => Ok(HwKind::Lut),
            "none" => Ok(HwKind::None),
            _ => Err(Error::InvalidConfig(format!(
                "unknown hardware loss {s:?} (deep, lut or none)"
            ))),
        }
    }
}

/// Units of the hardware term that `beta` multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HwScale {
    /// Predicted latency in milliseconds.
    Ms,
    /// Predicted latency standardised by the hardware model's own spread
    /// over the search space, `(ms - mean) / std`.
    Std,
}

impl std::str::FromStr for HwScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ms" => Ok(HwScale::Ms),
            "std" => Ok(HwScale::Std),
            _ => Err(Error::InvalidConfig(format!(
                "unknown hardware scale {s:?} (ms or std)"
            ))),
        }
    }
}

/// A differentiable latency estimate of a relaxed architecture.
pub trait HardwareLoss: Sync {
    fn kind(&self) -> HwKind;

    /// `(K, L)` the estimate is defined for.
    fn dims(&self) -> (usize, usize);

    /// Latency in ms and its gradient with respect to every entry of `m`.
    fn value_and_grad(&self, m: &ArchMatrix) -> Result<(f64, ArchMatrix)>;

    /// Mean and standard deviation of the estimate over the search space,
    /// in ms.
    fn spread(&self) -> (f64, f64);
}

impl HardwareLoss for HwLossModel {
    fn kind(&self) -> HwKind {
        HwKind::Deep
    }

    fn dims(&self) -> (usize, usize) {
        (self.num_candidates(), self.num_layers())
    }

    fn value_and_grad(&self, m: &ArchMatrix) -> Result<(f64, ArchMatrix)> {
        crate::hwloss::value_and_grad(self, m)
    }

    fn spread(&self) -> (f64, f64) {
        let s = self.scaler();
        (s.mean_ms, s.std_ms)
    }
}

impl HardwareLoss for Lut {
    fn kind(&self) -> HwKind {
        HwKind::Lut
    }

    fn dims(&self) -> (usize, usize) {
        (self.num_candidates(), self.num_layers())
    }

    fn value_and_grad(&self, m: &ArchMatrix) -> Result<(f64, ArchMatrix)> {
        let v = lut_latency(self, m)?;
        let (k, l) = self.dims();
        let grad = (0..k)
            .flat_map(|ki| (0..l).map(move |li| (ki, li)))
            .map(|(ki, li)| self.entry(ki, li))
            .collect();
        Ok((v, ArchMatrix::from_vec_unchecked(k, l, grad)?))
    }

    fn spread(&self) -> (f64, f64) {
        self.uniform_moments()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub beta: f64,
    pub hw_kind: HwKind,
    pub hw_scale: HwScale,
    pub epochs: usize,
    pub lr_weights: f64,
    pub momentum: f64,
    pub lr_arch: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Zero the head and never train it, making the task loss constant.
    pub freeze_head: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            hw_kind: HwKind::None,
            hw_scale: HwScale::Std,
            epochs: 50,
            lr_weights: 1e-2,
            momentum: 0.9,
            lr_arch: 3e-3,
            batch_size: 128,
            seed: 0,
            freeze_head: false,
        }
    }
}

impl SearchConfig {
    fn check(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lr_weights) || !positive(self.lr_arch) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning rates, epochs and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training cross-entropy of the weight pass.
    pub train_loss: f64,
    /// Validation cross-entropy at the end of the epoch.
    pub val_loss: f64,
    /// Hardware estimate of the relaxed architecture at the end of the
    /// epoch; absent when the search ignores hardware.
    pub hw_term_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    #[serde(serialize_with = "as_text")]
    pub arch: DiscreteArch,
    /// Columns of the relaxed architecture the result was discretised from.
    #[serde(serialize_with = "as_columns")]
    pub relaxed_final: ArchMatrix,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Generic-paradigm latency of `arch` on each requested budget.
    pub searched_latency_ms: BTreeMap<String, f64>,
    pub final_accuracy: Option<f64>,
    pub config: SearchConfig,
}

impl SearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialises") + "\n"
    }
}

fn as_text<S: Serializer>(a: &DiscreteArch, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(a)
}

fn as_columns<S: Serializer>(m: &ArchMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq((0..m.num_layers()).map(|l| m.column(l)))
}

/// Hardware term and its gradient in the units `beta` multiplies.
fn hw_term(hw: &dyn HardwareLoss, scale: HwScale, m: &ArchMatrix) -> Result<(f64, f64, ArchMatrix)> {
    let (ms, grad) = hw.value_and_grad(m)?;
    match scale {
        HwScale::Ms => Ok((ms, ms, grad)),
        HwScale::Std => {
            let (mean, std) = hw.spread();
            let std = if std > 0.0 { std } else { 1.0 };
            let g = grad.values().iter().map(|v| v / std).collect();
            Ok((
                ms,
                (ms - mean) / std,
                ArchMatrix::from_vec_unchecked(m.num_candidates(), m.num_layers(), g)?,
            ))
        }
    }
}

/// First-order bi-level search.
///
/// Each epoch makes one pass of weight updates on the training split at the
/// current relaxed architecture, then one pass of architecture updates over
/// the validation split on `CE + beta * hw(m)`. The architecture of the
/// epoch with the lowest end-of-epoch validation objective is returned.
pub fn search(
    space: &SearchSpaceSpec,
    task: &TaskData,
    hw: Option<&dyn HardwareLoss>,
    cfg: &SearchConfig,
    budgets: &[HardwareBudget],
) -> Result<SearchResult> {
    cfg.check()?;
    if task.input_dim != space.input_dim() || task.num_classes != space.num_classes() {
        return Err(Error::InvalidConfig("task data does not match the search space".into()));
    }
    if task.train.is_empty() || task.val.is_empty() {
        return Err(Error::EmptyDataset("search needs train and validation samples".into()));
    }
    let (k, l) = (space.num_candidates(), space.num_layers());
    let hw = match (cfg.hw_kind, hw) {
        (HwKind::None, _) => None,
        (kind, Some(h)) if h.kind() == kind => {
            let (hk, hl) = h.dims();
            if (hk, hl) != (k, l) {
                return Err(Error::MismatchedSpace {
                    model_k: hk,
                    model_l: hl,
                    space_k: k,
                    space_l: l,
                });
            }
            Some(h)
        }
        (kind, _) => {
            return Err(Error::InvalidConfig(format!(
                "search configured for a {kind:?} hardware loss but none was given"
            )))
        }
    };
    // beta = 0 leaves the hardware model untouched.
    let hw = hw.filter(|_| cfg.beta > 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Supernet::init(space, rng.next_u64());
    if cfg.freeze_head {
        net.zero_head();
    }
    let mut arch: Bindings = Bindings::new();
    let noise: Vec<f64> = (0..k * l).map(|_| rng.random_range(-1e-3..1e-3)).collect();
    arch.insert("arch".into(), Tensor::new(vec![k, l], noise)?);
    let relaxed = |arch: &Bindings| -> Result<ArchMatrix> {
        relax(&crate::archspace::ArchLogits::from_vec(
            k,
            l,
            arch["arch"].data().to_vec(),
        )?)
    };

    let weight_net = net.net(
        None,
        Grads::Weights {
            freeze_head: cfg.freeze_head,
        },
    );
    let arch_net = net.net(None, Grads::Arch);
    let d = space.input_dim();
    let mut sgd = Sgd::new(cfg.lr_weights, cfg.momentum);
    let mut adam = Adam::new(cfg.lr_arch);
    let mut train_idx: Vec<usize> = (0..task.train.len()).collect();
    let mut val_idx: Vec<usize> = (0..task.val.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ArchMatrix)> = None;

    for epoch in 0..cfg.epochs {
        let m = relaxed(&arch)?;
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let (x, y) = task.train.gather(batch, d);
            let ev = weight_net.graph.forward(&net.bind(x, y, Some(&m)), Mode::Eval)?;
            loss_sum += ev.value(weight_net.loss).item()? * batch.len() as f64;
            let grads = ev.backward(weight_net.loss)?;
            sgd.step(net.params_mut(), &grads);
        }
        let train_loss = loss_sum / task.train.len() as f64;

        val_idx.shuffle(&mut rng);
        for batch in val_idx.chunks(cfg.batch_size) {
            let m = relaxed(&arch)?;
            let (x, y) = task.val.gather(batch, d);
            let ev = arch_net.graph.forward(&net.bind(x, y, Some(&m)), Mode::Eval)?;
            let mut g = ev
                .backward(arch_net.loss)?
                .remove("arch")
                .expect("arch is differentiated");
            if let Some(hw) = hw {
                let (_, _, hw_grad) = hw_term(hw, cfg.hw_scale, &m)?;
                for (gi, hi) in g.data_mut().iter_mut().zip(hw_grad.values()) {
                    *gi += cfg.beta * hi;
                }
            }
            let dm = ArchMatrix::from_vec_unchecked(k, l, g.into_data())?;
            let dlogits = relax_backward(&m, &dm)?;
            let grads = [("arch".to_string(), Tensor::new(vec![k, l], dlogits.values().to_vec())?)].into();
            adam.step(&mut arch, &grads);
        }

        let m = relaxed(&arch)?;
        let (val_loss, _) = score_split(&net, &arch_net, &task.val, Some(&m))?;
        let (hw_term_ms, objective) = match hw {
            Some(hw) => {
                let (ms, scaled, _) = hw_term(hw, cfg.hw_scale, &m)?;
                (Some(ms), val_loss + cfg.beta * scaled)
            }
            None => (None, val_loss),
        };
        log::debug!(
            "epoch {epoch}: train CE {train_loss:.4}, val CE {val_loss:.4}, arch {}",
            m.discretize()
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            hw_term_ms,
        });
        if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
            best = Some((objective, epoch, m));
        }
    }

    let (_, best_epoch, relaxed_final) = best.expect("at least one epoch");
    let arch = relaxed_final.discretize();
    let mut searched_latency_ms = BTreeMap::new();
    for b in budgets {
        searched_latency_ms.insert(b.name.clone(), benchmark_generic(&arch, space, b)?.latency_ms()?);
    }
    Ok(SearchResult {
        arch,
        relaxed_final,
        best_epoch,
        history,
        searched_latency_ms,
        final_accuracy: None,
        config: cfg.clone(),
    })
}

/// Schedule for retraining a searched architecture from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinalConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Trains the discrete network from fresh weights and returns its test
/// accuracy at the epoch with the best validation cross-entropy.
pub fn train_final(arch: &DiscreteArch, space: &SearchSpaceSpec, task: &TaskData, cfg: &FinalConfig) -> Result<f64> {
    arch.check_for(space)?;
    if task.train.is_empty() || task.val.is_empty() || task.test.is_empty() {
        return Err(Error::EmptyDataset("final training needs all three splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Supernet::init(space, rng.next_u64());
    let train_net = net.net(Some(arch), Grads::Weights { freeze_head: false });
    let d = space.input_dim();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum);
    let mut idx: Vec<usize> = (0..task.train.len()).collect();
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        for batch in idx.chunks(cfg.batch_size.max(1)) {
            let (x, y) = task.train.gather(batch, d);
            let ev = train_net.graph.forward(&net.bind(x, y, None), Mode::Eval)?;
            let grads = ev.backward(train_net.loss)?;
            sgd.step(net.params_mut(), &grads);
        }
        let (val_loss, _) = score_split(&net, &train_net, &task.val, None)?;
        if best.is_none_or(|(b, _)| val_loss < b) {
            let (_, acc) = score_split(&net, &train_net, &task.test, None)?;
            best = Some((val_loss, acc));
        }
    }
    Ok(best.map_or(0.0, |(_, acc)| acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{BlockKind, DEFAULT_CATALOG};
    use crate::dnas::gen_task_data;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<'a> {
        inner: &'a Lut,
        calls: AtomicUsize,
    }

    impl HardwareLoss for Counting<'_> {
        fn kind(&self) -> HwKind {
            HwKind::Lut
        }
        fn dims(&self) -> (usize, usize) {
            self.inner.dims()
        }
        fn value_and_grad(&self, m: &ArchMatrix) -> Result<(f64, ArchMatrix)> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.value_and_grad(m)
        }
        fn spread(&self) -> (f64, f64) {
            self.inner.spread()
        }
    }

    fn small_space() -> SearchSpaceSpec {
        SearchSpaceSpec::new(2, 16, 8, 3, &DEFAULT_CATALOG).unwrap()
    }

    fn quick(beta: f64, kind: HwKind) -> SearchConfig {
        SearchConfig {
            beta,
            hw_kind: kind,
            epochs: 3,
            batch_size: 32,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn zero_beta_never_reads_the_hardware_model() {
        let space = small_space();
        let task = gen_task_data(0, 150, 8, 3, 0.3).unwrap();
        let lut = crate::perfmodel::build_lut(&space, &HardwareBudget::large());
        let counting = Counting {
            inner: &lut,
            calls: AtomicUsize::new(0),
        };
        let r = search(&space, &task, Some(&counting), &quick(0.0, HwKind::Lut), &[]).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 0);
        assert!(r.history.iter().all(|h| h.hw_term_ms.is_none()));

        let r = search(&space, &task, Some(&counting), &quick(0.01, HwKind::Lut), &[]).unwrap();
        assert!(counting.calls.load(Ordering::SeqCst) > 0);
        assert!(r.history.iter().all(|h| h.hw_term_ms.is_some()));
    }

    #[test]
    fn same_seed_same_result() {
        let space = small_space();
        let task = gen_task_data(1, 150, 8, 3, 0.3).unwrap();
        let lut = crate::perfmodel::build_lut(&space, &HardwareBudget::large());
        let budgets = HardwareBudget::builtin();
        let a = search(&space, &task, Some(&lut), &quick(0.01, HwKind::Lut), &budgets).unwrap();
        let b = search(&space, &task, Some(&lut), &quick(0.01, HwKind::Lut), &budgets).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.arch, a.relaxed_final.discretize());
        assert_eq!(a.searched_latency_ms.len(), 3);
    }

    #[test]
    fn mismatched_hardware_model_is_rejected() {
        let space = small_space();
        let task = gen_task_data(1, 150, 8, 3, 0.3).unwrap();
        let other = SearchSpaceSpec::new(3, 16, 8, 3, &DEFAULT_CATALOG).unwrap();
        let lut = crate::perfmodel::build_lut(&other, &HardwareBudget::large());
        let err = search(&space, &task, Some(&lut), &quick(0.01, HwKind::Lut), &[]).unwrap_err();
        assert!(matches!(err, Error::MismatchedSpace { .. }));
        let err = search(&space, &task, None, &quick(0.01, HwKind::Deep), &[]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn zero_blocks_score_at_chance_and_dense_blocks_learn() {
        let space = SearchSpaceSpec::new(2, 16, 8, 4, &DEFAULT_CATALOG).unwrap();
        let clean = gen_task_data(2, 400, 8, 4, 0.0).unwrap();
        let cfg = FinalConfig {
            epochs: 40,
            ..FinalConfig::default()
        };
        assert_eq!(
            train_final(&DiscreteArch::uniform(0, 2), &space, &clean, &cfg).unwrap(),
            1.0
        );

        let noisy = gen_task_data(2, 400, 8, 4, 0.35).unwrap();
        let zero = train_final(&DiscreteArch::uniform(4, 2), &space, &noisy, &cfg).unwrap();
        assert!(zero <= 0.4, "{zero}");
        let dense = train_final(&DiscreteArch::uniform(0, 2), &space, &noisy, &cfg).unwrap();
        assert!(dense >= zero);
    }

    #[test]
    fn frozen_head_makes_the_task_loss_flat() {
        let space = SearchSpaceSpec::new(2, 16, 8, 3, &[BlockKind::FullDense, BlockKind::Identity]).unwrap();
        let task = gen_task_data(3, 150, 8, 3, 0.3).unwrap().with_constant_labels();
        let cfg = SearchConfig {
            freeze_head: true,
            ..quick(0.0, HwKind::None)
        };
        let r = search(&space, &task, None, &cfg, &[]).unwrap();
        let ln3 = 3f64.ln();
        assert!(r.history.iter().all(|h| (h.val_loss - ln3).abs() < 1e-12));
    }
}
