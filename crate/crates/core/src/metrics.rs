//! Error rate, negative log-likelihood and Brier score of probability rows.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor before taking logs.
pub const NLL_FLOOR: f64 = 1e-12;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check(preds: &Tensor, labels: &[usize]) -> Result<usize> {
    let (n, c) = preds.dims2("metrics")?;
    if n == 0 || labels.is_empty() {
        return Err(Error::Empty);
    }
    if n != labels.len() {
        return Err(shape_err("metrics", alloc::format!("{n} prediction rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(shape_err("metrics", alloc::format!("label {bad} out of range for {c} classes")));
    }
    Ok(n)
}

fn sample_error(row: &[f64], label: usize) -> f64 {
    if argmax(row) == label {
        0.0
    } else {
        1.0
    }
}

fn sample_nll(row: &[f64], label: usize) -> f64 {
    -math::ln(row[label].max(NLL_FLOOR))
}

/// Compensated (Neumaier) sum over classes, so e.g. the uniform-over-10
/// score lands on the double nearest 0.9.
fn sample_brier(row: &[f64], label: usize) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (c, &p) in row.iter().enumerate() {
        let d = p - if c == label { 1.0 } else { 0.0 };
        let x = d * d;
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Percentage of rows whose argmax differs from the label.
pub fn error_rate(preds: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = check(preds, labels)?;
    Ok(100.0 * preds.rows().zip(labels).map(|(r, &l)| sample_error(r, l)).sum::<f64>() / n as f64)
}

pub fn brier(preds: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = check(preds, labels)?;
    Ok(preds.rows().zip(labels).map(|(r, &l)| sample_brier(r, l)).sum::<f64>() / n as f64)
}

pub fn nll(preds: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = check(preds, labels)?;
    Ok(preds.rows().zip(labels).map(|(r, &l)| sample_nll(r, l)).sum::<f64>() / n as f64)
}

/// Sums of per-sample scores for one segment (or for everything).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricTotals {
    pub count: u64,
    pub errors: f64,
    pub nll: f64,
    pub brier: f64,
}

/// Mean scores; `error` in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricMeans {
    pub error: f64,
    pub nll: f64,
    pub brier: f64,
}

impl MetricTotals {
    pub fn add(&mut self, row: &[f64], label: usize) {
        self.count += 1;
        self.errors += sample_error(row, label);
        self.nll += sample_nll(row, label);
        self.brier += sample_brier(row, label);
    }

    pub fn merge(&mut self, other: &MetricTotals) {
        self.count += other.count;
        self.errors += other.errors;
        self.nll += other.nll;
        self.brier += other.brier;
    }

    /// `None` while empty.
    pub fn means(&self) -> Option<MetricMeans> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            MetricMeans { error: 100.0 * self.errors / n, nll: self.nll / n, brier: self.brier / n }
        })
    }
}

/// Running totals with a per-segment breakdown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricAccumulator {
    total: MetricTotals,
    segments: Vec<MetricTotals>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores a batch and returns its own means.
    pub fn add_batch(&mut self, segment: usize, preds: &Tensor, labels: &[usize]) -> Result<MetricMeans> {
        check(preds, labels)?;
        if self.segments.len() <= segment {
            self.segments.resize(segment + 1, MetricTotals::default());
        }
        let mut batch = MetricTotals::default();
        for (row, &l) in preds.rows().zip(labels) {
            batch.add(row, l);
        }
        self.segments[segment].merge(&batch);
        self.total.merge(&batch);
        Ok(batch.means().expect("non-empty batch"))
    }

    pub fn total(&self) -> &MetricTotals {
        &self.total
    }

    pub fn segments(&self) -> &[MetricTotals] {
        &self.segments
    }

    pub fn count(&self) -> u64 {
        self.total.count
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        if self.segments.len() < other.segments.len() {
            self.segments.resize(other.segments.len(), MetricTotals::default());
        }
        for (a, b) in self.segments.iter_mut().zip(&other.segments) {
            a.merge(b);
        }
        self.total.merge(&other.total);
    }
}
