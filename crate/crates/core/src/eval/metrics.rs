use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PredictionSet;

/// Indices of the `k` highest scores, highest first; ties go to the lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn hit(scores: &[f64], truth: usize, k: usize) -> bool {
    // Rank of the truth: classes strictly above it, plus equal-scored lower indices.
    let s = scores[truth];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < truth))
        .count();
    ahead < k
}

fn non_empty(p: &PredictionSet) -> Result<()> {
    if p.records.is_empty() {
        return Err(Error::Evaluation("no predictions to evaluate".into()));
    }
    Ok(())
}

/// Fraction of clips whose true class is among the `k` highest scores.
pub fn topk_accuracy(p: &PredictionSet, k: usize) -> Result<f64> {
    non_empty(p)?;
    let hits = p.records.iter().filter(|r| hit(&r.scores, r.target, k)).count();
    Ok(hits as f64 / p.records.len() as f64)
}

/// Per-class top-`k` recall averaged over the classes that occur.
pub fn class_mean_topk_recall(p: &PredictionSet, k: usize) -> Result<f64> {
    non_empty(p)?;
    let classes = p.records.iter().map(|r| r.target).max().unwrap_or(0) + 1;
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for r in &p.records {
        counts[r.target] += 1;
        if hit(&r.scores, r.target, k) {
            hits[r.target] += 1;
        }
    }
    let present: Vec<f64> = counts
        .iter()
        .zip(&hits)
        .filter(|(c, _)| **c > 0)
        .map(|(c, h)| *h as f64 / *c as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn class_mean_top5_recall(p: &PredictionSet) -> Result<f64> {
    class_mean_topk_recall(p, 5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub mean_top5_recall: f64,
    pub clips: usize,
}

impl Metrics {
    pub fn of(p: &PredictionSet) -> Result<Self> {
        Ok(Metrics {
            top1: topk_accuracy(p, 1)?,
            top5: topk_accuracy(p, 5)?,
            mean_top5_recall: class_mean_top5_recall(p)?,
            clips: p.records.len(),
        })
    }
}
