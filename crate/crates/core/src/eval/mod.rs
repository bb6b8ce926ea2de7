//! Metrics, prediction files, late fusion and evaluation sweeps.

mod metrics;
mod predictions;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{class_mean_top5_recall, class_mean_topk_recall, topk_accuracy, topk_indices, Metrics};
pub use predictions::{fusion_preset, late_fuse, ActionMap, PredictionRecord, PredictionSet};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

/// Predictions for every clip, `steps` rollout steps past the observed window.
pub fn predict_dataset(model: &Model, data: &Dataset, steps: usize) -> Result<PredictionSet> {
    let records = data
        .clips
        .par_iter()
        .map(|c| Ok(PredictionRecord::new(c.id.clone(), model.predict(c, steps)?, c.target)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet { records })
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    Metrics::of(&predict_dataset(model, data, 0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau_a: f64,
    pub steps: usize,
    pub top1: f64,
    pub top5: f64,
    pub mean_top5_recall: f64,
}

/// Metrics at each anticipation time in `taus`.
///
/// `load(τ_a)` returns the clips observed `τ_a` seconds before their action.
/// The model rolls out `round((τ_a − τ_train)·fps)` extra steps.
pub fn eval_variable_tau(
    model: &Model,
    train_tau: f64,
    fps: f64,
    taus: &[f64],
    load: impl Fn(f64) -> Result<Dataset>,
) -> Result<Vec<TauRow>> {
    taus.iter()
        .map(|&tau| {
            if tau < train_tau - 1e-9 {
                return Err(Error::config(format!(
                    "anticipation time {tau} is below the training value {train_tau}"
                )));
            }
            let steps = ((tau - train_tau) * fps).round() as usize;
            let m = Metrics::of(&predict_dataset(model, &load(tau)?, steps)?)?;
            Ok(TauRow {
                tau_a: tau,
                steps,
                top1: m.top1,
                top5: m.top5,
                mean_top5_recall: m.mean_top5_recall,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub ratio: f64,
    pub comparisons: usize,
    pub top1: f64,
    pub top5: f64,
    pub mean_top5_recall: f64,
}

/// Metrics with relative representations restricted to a seeded subset of each size.
pub fn prototype_ratio_sweep(model: &Model, data: &Dataset, ratios: &[f64], seed: u64) -> Result<Vec<RatioRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            let mut m = model.clone();
            m.set_subset_ratio(ratio, seed)?;
            let preds = predict_dataset(&m, data, 0)?;
            preds.validate()?;
            let met = Metrics::of(&preds)?;
            Ok(RatioRow {
                ratio,
                comparisons: m.comparisons(),
                top1: met.top1,
                top5: met.top5,
                mean_top5_recall: met.mean_top5_recall,
            })
        })
        .collect()
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
