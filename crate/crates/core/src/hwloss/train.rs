use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{HwLossModel, Scaler};
use crate::diffcore::Mode;
use crate::optim::Adam;
use crate::perfmodel::LatencyDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_p: f64,
    pub embedding_size: usize,
    pub h1: usize,
    pub h2: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            dropout_p: 0.1,
            embedding_size: 10,
            h1: 64,
            h2: 64,
        }
    }
}

impl TrainConfig {
    fn check(&self, n_train: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if self.batch_size > n_train {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds the {n_train} training samples",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Mean absolute errors on normalised targets after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    /// Whether this epoch became the returned checkpoint.
    pub checkpoint: bool,
}

/// One-hot rows (layer-major) and targets of a dataset.
fn rows_of(ds: &LatencyDataset) -> (Vec<f64>, Vec<f64>) {
    let (k, l) = (ds.num_candidates(), ds.num_layers());
    let mut rows = vec![0.0; ds.len() * k * l];
    for (i, r) in ds.records().iter().enumerate() {
        for (li, &op) in r.arch.ops().iter().enumerate() {
            rows[i * k * l + li * k + op] = 1.0;
        }
    }
    (rows, ds.records().iter().map(|r| r.latency_ms).collect())
}

fn mae(pred: &[f64], target: &[f64]) -> f64 {
    let mut errs: Vec<f64> = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).collect();
    errs.sort_by(f64::total_cmp);
    errs.iter().sum::<f64>() / errs.len() as f64
}

pub fn train(ds_train: &LatencyDataset, ds_val: &LatencyDataset, cfg: &TrainConfig) -> Result<HwLossModel> {
    train_with_history(ds_train, ds_val, cfg).map(|(m, _)| m)
}

/// Mini-batch MAE regression on normalised latencies with Adam. Returns the
/// parameters of the epoch with the lowest validation MAE.
pub fn train_with_history(
    ds_train: &LatencyDataset,
    ds_val: &LatencyDataset,
    cfg: &TrainConfig,
) -> Result<(HwLossModel, Vec<EpochStats>)> {
    if ds_train.is_empty() || ds_val.is_empty() {
        return Err(Error::EmptyDataset(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let (k, l) = (ds_train.num_candidates(), ds_train.num_layers());
    if (ds_val.num_candidates(), ds_val.num_layers()) != (k, l) {
        return Err(Error::MismatchedSpace {
            model_k: k,
            model_l: l,
            space_k: ds_val.num_candidates(),
            space_l: ds_val.num_layers(),
        });
    }
    cfg.check(ds_train.len())?;

    let (train_rows, train_ms) = rows_of(ds_train);
    let (val_rows, val_ms) = rows_of(ds_val);
    let scaler = Scaler::fit(&train_ms);
    let train_z: Vec<f64> = train_ms.iter().map(|&t| scaler.normalize(t)).collect();
    let val_z: Vec<f64> = val_ms.iter().map(|&t| scaler.normalize(t)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = HwLossModel::init(
        k,
        l,
        cfg.embedding_size,
        cfg.h1,
        cfg.h2,
        cfg.dropout_p,
        scaler,
        rng.next_u64(),
    )?;
    let net = model.net(false);
    let width = k * l;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..ds_train.len()).collect();
    let mut best: Option<(f64, HwLossModel)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut rows = Vec::with_capacity(batch.len() * width);
            let mut target = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.extend_from_slice(&train_rows[i * width..(i + 1) * width]);
                target.push(train_z[i]);
            }
            let b = model.bind(rows, batch.len(), Some(target));
            let ev = net.graph.forward(&b, Mode::Train { seed: rng.next_u64() })?;
            loss_sum += ev.value(net.loss).item()? * batch.len() as f64;
            let grads = ev.backward(net.loss)?;
            opt.step(model.params_mut(), &grads);
        }
        let train_mae = loss_sum / ds_train.len() as f64;
        let val_mae = mae(&model.forward_rows(&net, val_rows.clone(), ds_val.len())?, &val_z);
        let improved = best.as_ref().is_none_or(|(b, _)| val_mae < *b);
        if improved {
            best = Some((val_mae, model.clone()));
        }
        log::debug!("epoch {epoch}: train MAE {train_mae:.5}, val MAE {val_mae:.5}");
        history.push(EpochStats {
            epoch,
            train_mae,
            val_mae,
            checkpoint: improved,
        });
    }
    let (val_mae, model) = best.expect("at least one epoch");
    log::info!("best validation MAE {val_mae:.5} (normalised)");
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{sample_uniform, SearchSpaceSpec};
    use crate::hwloss::predict;
    use crate::perfmodel::{DataSource, LatencyRecord};

    fn constant(n: usize, seed: u64) -> LatencyDataset {
        let space = SearchSpaceSpec::desk_default();
        let records = sample_uniform(&space, n, seed)
            .into_iter()
            .map(|arch| LatencyRecord { arch, latency_ms: 5.0 })
            .collect();
        LatencyDataset::new(5, 6, DataSource::Ingested, "x", records).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_targets_are_learned() {
        let (tr, va) = (constant(512, 1), constant(128, 2));
        let (model, history) = train_with_history(&tr, &va, &small_cfg()).unwrap();
        let best = history.iter().rfind(|h| h.checkpoint).unwrap();
        assert!(best.val_mae * model.scaler().std_ms < 0.01 * 5.0);
        let m = crate::archspace::ArchMatrix::uniform(5, 6);
        assert!((predict(&model, &m).unwrap() - 5.0).abs() < 0.05);
    }

    #[test]
    fn checkpoints_only_improve() {
        let (tr, va) = (constant(256, 3), constant(64, 4));
        let (_, history) = train_with_history(&tr, &va, &small_cfg()).unwrap();
        let marks: Vec<f64> = history.iter().filter(|h| h.checkpoint).map(|h| h.val_mae).collect();
        assert!(marks.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn same_seed_same_model() {
        let (tr, va) = (constant(128, 5), constant(32, 6));
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..TrainConfig::default()
        };
        assert_eq!(
            train(&tr, &va, &cfg).unwrap().to_json(),
            train(&tr, &va, &cfg).unwrap().to_json()
        );
    }

    #[test]
    fn oversized_batches_are_rejected() {
        let (tr, va) = (constant(10, 5), constant(10, 6));
        assert!(matches!(
            train(&tr, &va, &TrainConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
