//! Classification metrics with support-weighted averaging.
//!
//! Precision and recall are computed per class and averaged with weights
//! proportional to each class's support. Weighted recall therefore equals
//! accuracy. F1 is the harmonic mean of the weighted precision and recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "config_key,accuracy,precision,recall,f1";

/// Harmonic mean of two percentages; 0 when both are 0.
pub fn f1_harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Round to one decimal, half away from zero, after snapping away float
/// noise below 1e-9.
pub fn round1(v: f64) -> f64 {
    let snapped = (v * 1e9).round() / 1e9;
    (snapped * 10.0).round() / 10.0
}

/// Truncate toward zero at one decimal (with the same noise snapping).
pub fn truncate1(v: f64) -> f64 {
    let snapped = (v * 1e9).round() / 1e9;
    (snapped * 10.0).trunc() / 10.0
}

/// One row of a metrics table: percentages with one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_key: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsRow {
    /// Builds a row from unrounded percentages. F1 is computed from the
    /// rounded precision and recall so the printed columns agree with each
    /// other.
    pub fn from_percentages(config_key: impl Into<String>, accuracy: f64, precision: f64, recall: f64) -> Self {
        let (precision, recall) = (round1(precision), round1(recall));
        Self {
            config_key: config_key.into(),
            accuracy: round1(accuracy),
            precision,
            recall,
            f1: round1(f1_harmonic(precision, recall)),
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:.1},{:.1},{:.1},{:.1}",
            self.config_key, self.accuracy, self.precision, self.recall, self.f1
        )
    }
}

/// Square confusion matrix, `counts[label][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Argument("no predictions to score".into()));
        }
        if predictions.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![vec![0; num_classes]; num_classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= num_classes || l >= num_classes {
                return Err(Error::Argument(format!(
                    "class index {} outside the {num_classes}-class list",
                    p.max(l)
                )));
            }
            counts[l][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.counts.len()).map(|c| self.counts[c][c]).sum();
        correct as f64 / self.total() as f64
    }

    fn support(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    fn predicted(&self, c: usize) -> usize {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// Support-weighted precision; classes never predicted count as 0.
    pub fn weighted_precision(&self) -> f64 {
        let n = self.total() as f64;
        (0..self.counts.len())
            .map(|c| {
                let predicted = self.predicted(c);
                let p = if predicted == 0 { 0.0 } else { self.counts[c][c] as f64 / predicted as f64 };
                self.support(c) as f64 / n * p
            })
            .sum()
    }

    /// Support-weighted recall.
    pub fn weighted_recall(&self) -> f64 {
        let n = self.total() as f64;
        (0..self.counts.len())
            .filter(|&c| self.support(c) > 0)
            .map(|c| self.support(c) as f64 / n * (self.counts[c][c] as f64 / self.support(c) as f64))
            .sum()
    }
}

/// Scores predicted class indices against labels.
pub fn compute_metrics(
    config_key: impl Into<String>,
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<MetricsRow> {
    let cm = Confusion::new(predictions, labels, num_classes)?;
    Ok(MetricsRow::from_percentages(
        config_key,
        100.0 * cm.accuracy(),
        100.0 * cm.weighted_precision(),
        100.0 * cm.weighted_recall(),
    ))
}
