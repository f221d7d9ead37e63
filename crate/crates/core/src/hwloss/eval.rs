use serde::{Deserialize, Serialize};

use super::model::HwLossModel;
use crate::archspace::DiscreteArch;
use crate::perfmodel::{LatencyDataset, Lut};
use crate::{Error, Result};

/// Anything that estimates the latency of discrete architectures.
pub trait LatencyPredictor {
    fn name(&self) -> &'static str;

    fn predict_ms(&self, archs: &[DiscreteArch]) -> Result<Vec<f64>>;
}

impl LatencyPredictor for HwLossModel {
    fn name(&self) -> &'static str {
        "deep"
    }

    fn predict_ms(&self, archs: &[DiscreteArch]) -> Result<Vec<f64>> {
        self.predict_discrete(archs)
    }
}

impl LatencyPredictor for Lut {
    fn name(&self) -> &'static str {
        "lut"
    }

    fn predict_ms(&self, archs: &[DiscreteArch]) -> Result<Vec<f64>> {
        archs.iter().map(|a| self.arch_latency(a)).collect()
    }
}

/// Relative prediction error, `|pred - true| / true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub mean_rel_err: f64,
    pub std_rel_err: f64,
    pub max_rel_err: f64,
    /// Mean error within each tenth of the test set ordered by true latency,
    /// fastest first.
    pub per_decile: Vec<f64>,
    pub n_samples: usize,
}

/// Order-independent sum: the terms are added smallest first.
fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate_predictor(p: &dyn LatencyPredictor, ds: &LatencyDataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let archs: Vec<DiscreteArch> = ds.records().iter().map(|r| r.arch.clone()).collect();
    let preds = p.predict_ms(&archs)?;
    let mut pairs: Vec<(f64, f64, &DiscreteArch)> = ds
        .records()
        .iter()
        .zip(&preds)
        .map(|(r, &pred)| (r.latency_ms, (pred - r.latency_ms).abs() / r.latency_ms, &r.arch))
        .collect();
    // Ties in latency are broken by architecture so deciles do not depend
    // on record order.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.2.cmp(b.2)));
    let errs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let n = errs.len();
    let mean = stable_mean(&errs);
    let sq: Vec<f64> = errs.iter().map(|e| (e - mean).powi(2)).collect();
    let per_decile = (0..10)
        .map(|d| (d * n / 10, (d + 1) * n / 10))
        .filter(|(a, b)| b > a)
        .map(|(a, b)| stable_mean(&errs[a..b]))
        .collect();
    Ok(EvalReport {
        predictor: p.name().into(),
        mean_rel_err: mean,
        std_rel_err: stable_mean(&sq).sqrt(),
        max_rel_err: errs.iter().copied().fold(0.0, f64::max),
        per_decile,
        n_samples: n,
    })
}

pub fn evaluate(model: &HwLossModel, ds: &LatencyDataset) -> Result<EvalReport> {
    evaluate_predictor(model, ds)
}
