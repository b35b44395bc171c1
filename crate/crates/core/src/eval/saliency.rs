//! Saliency feature importance: normalized input-gradient magnitudes.

use ndarray::{Array1, Array2};
use serde::Serialize;

use super::stats::t_interval95;
use super::EvalError;
use crate::data::Modality;
use crate::models::{Bundle, ModelError, SleepModel};

pub const TOP_PER_MODALITY: usize = 10;

/// Anything that can report `∂(mean output)/∂X_day` for a bundle.
pub trait InputGradient {
    fn input_gradient(&self, bundle: &Bundle) -> Result<Array2<f64>, ModelError>;
}

impl InputGradient for SleepModel {
    fn input_gradient(&self, bundle: &Bundle) -> Result<Array2<f64>, ModelError> {
        SleepModel::input_gradient(self, bundle)
    }
}

/// Importance of each feature for one input: gradient magnitudes averaged
/// over the original (non-repeated) nodes, normalized to sum 1. A zero
/// gradient yields a uniform vector.
pub fn input_importance<M: InputGradient>(model: &M, b: &Bundle) -> Result<Array1<f64>, ModelError> {
    let g = model.input_gradient(b)?;
    let rows: Vec<usize> = (0..b.eta()).filter(|&r| !b.nodes[r].duplicated).collect();
    let mut v = Array1::zeros(g.ncols());
    for &r in &rows {
        v += &g.row(r).mapv(f64::abs);
    }
    let total = v.sum();
    if total > 0.0 {
        v /= total;
    } else {
        v.fill(1.0 / g.ncols() as f64);
    }
    Ok(v)
}

/// Mean of the per-input importance vectors over `bundles`.
pub fn saliency_importance<M: InputGradient>(model: &M, bundles: &[Bundle]) -> Result<Array1<f64>, EvalError> {
    let Some(first) = bundles.first() else {
        return Err(EvalError::NothingScored);
    };
    let mut acc = Array1::zeros(first.features());
    for b in bundles {
        acc += &input_importance(model, b)?;
    }
    Ok(acc / bundles.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyRow {
    pub modality: Modality,
    pub rank: usize,
    pub feature: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Top features of every modality by mean importance across repeats, with
/// 95% t-intervals over the repeats.
pub fn saliency_table(
    repeats: &[Array1<f64>],
    names: &[String],
    modalities: &[Modality],
    top: usize,
) -> Vec<SaliencyRow> {
    let mut rows = Vec::new();
    for modality in Modality::ALL {
        let mut stats: Vec<(usize, f64, f64)> = (0..names.len())
            .filter(|&j| modalities[j] == modality)
            .map(|j| {
                let vals: Vec<f64> = repeats.iter().map(|r| r[j]).collect();
                let (m, h) = t_interval95(&vals);
                (j, m, h)
            })
            .collect();
        stats.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (rank, (j, m, h)) in stats.into_iter().take(top).enumerate() {
            rows.push(SaliencyRow {
                modality,
                rank: rank + 1,
                feature: names[j].clone(),
                mean: m,
                ci_low: m - h,
                ci_high: m + h,
            });
        }
    }
    rows
}
