//! Accuracy and support-weighted F1 from predicted and true labels.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl Metrics {
    /// Undefined ratios (no predictions or no support for a class) count as 0.
    pub fn from_predictions(
        predicted: &[usize],
        truth: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(
                "Metrics",
                format!("{} predictions for {} labels", predicted.len(), truth.len()),
            ));
        }
        if truth.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot evaluate an empty split".into(),
            ));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= num_classes || t >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class id {} out of range for {num_classes} classes",
                    p.max(t)
                )));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(&confusion))
    }

    /// `confusion[true][predicted]`; must be non-empty.
    pub fn from_confusion(confusion: &[Vec<usize>]) -> Self {
        let c = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_class: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let support: usize = confusion[k].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[k]).sum();
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
            .collect();
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            per_class
                .iter()
                .map(|m| f(m) * m.support as f64)
                .sum::<f64>()
                / total as f64
        };
        Self {
            accuracy: ratio(correct, total),
            weighted_f1: weighted(|m| m.f1),
            per_class,
        }
    }

    /// Support-weighted recall; always equal to accuracy.
    pub fn weighted_recall(&self) -> f64 {
        let total: usize = self.per_class.iter().map(|m| m.support).sum();
        self.per_class
            .iter()
            .map(|m| m.recall * m.support as f64)
            .sum::<f64>()
            / total as f64
    }

    pub fn weighted_precision(&self) -> f64 {
        let total: usize = self.per_class.iter().map(|m| m.support).sum();
        self.per_class
            .iter()
            .map(|m| m.precision * m.support as f64)
            .sum::<f64>()
            / total as f64
    }
}
