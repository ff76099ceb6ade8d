use rand::Rng;

use crate::stats::percentile_sorted;
use crate::{seed, Error, Result};

fn check_streams(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InsufficientData("no predictions".into()));
    }
    Ok(())
}

/// Percentage of predictions equal to their label.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_streams(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// `num_classes × num_classes` counts, rows are true labels.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_streams(preds, labels)?;
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::validation(format!(
                "class index {} outside {num_classes} classes",
                p.max(l)
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class precision, recall and F1; each is 0 when undefined.
pub fn per_class_metrics(confusion: &[Vec<usize>]) -> Vec<ClassMetrics> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

fn support_weighted(per_class: &[ClassMetrics]) -> f64 {
    let n: usize = per_class.iter().map(|c| c.support).sum();
    per_class
        .iter()
        .map(|c| c.support as f64 / n as f64 * c.f1)
        .sum()
}

/// Support-weighted mean of per-class F1, in [0, 1].
pub fn weighted_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_streams(preds, labels)?;
    let k = preds.iter().chain(labels).max().unwrap() + 1;
    let cm = confusion_matrix(preds, labels, k)?;
    Ok(support_weighted(&per_class_metrics(&cm)))
}

pub(crate) fn weighted_f1_from(per_class: &[ClassMetrics]) -> f64 {
    support_weighted(per_class)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    /// Percent accuracy.
    pub low: f64,
    pub high: f64,
    /// `high − low`, in accuracy percentage points.
    pub width: f64,
}

/// Percentile bootstrap interval of the accuracy.
pub fn bootstrap_ci(
    preds: &[usize],
    labels: &[usize],
    resamples: usize,
    level: f64,
    seed_: u64,
) -> Result<ConfidenceInterval> {
    check_streams(preds, labels)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!("confidence level {level} outside (0, 1)")));
    }
    if resamples < 100 {
        return Err(Error::validation(format!("{resamples} resamples; at least 100 required")));
    }
    let hits: Vec<bool> = preds.iter().zip(labels).map(|(p, l)| p == l).collect();
    let n = hits.len();
    let mut rng = seed::rng(seed_);
    let mut accs: Vec<f64> = (0..resamples)
        .map(|_| {
            let c = (0..n).filter(|_| hits[rng.random_range(0..n)]).count();
            100.0 * c as f64 / n as f64
        })
        .collect();
    accs.sort_by(f64::total_cmp);
    let low = percentile_sorted(&accs, 100.0 * (1.0 - level) / 2.0);
    let high = percentile_sorted(&accs, 100.0 * (1.0 + level) / 2.0);
    Ok(ConfidenceInterval {
        low,
        high,
        width: high - low,
    })
}
