//! Confusion counts and the derived classification metrics.

use super::PipelineError;
use crate::data::BinaryTarget;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub confusion: ConfusionMatrix,
}

/// Tallies predictions against ground truth. The slices are paired by
/// index and must be the same, non-zero length.
pub fn confusion_matrix(
    predicted: &[BinaryTarget],
    truth: &[BinaryTarget],
) -> Result<ConfusionMatrix, PipelineError> {
    if predicted.len() != truth.len() {
        return Err(PipelineError::Length(format!(
            "{} predictions against {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(PipelineError::Empty("no predictions to score".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (BinaryTarget::Positive, BinaryTarget::Positive) => cm.tp += 1,
            (BinaryTarget::Positive, BinaryTarget::Negative) => cm.fp += 1,
            (BinaryTarget::Negative, BinaryTarget::Positive) => cm.fn_ += 1,
            (BinaryTarget::Negative, BinaryTarget::Negative) => cm.tn += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derives precision, recall, F1, accuracy, and specificity from the
/// counts. Undefined ratios (zero denominator) are reported as 0.
pub fn metric_suite(cm: &ConfusionMatrix) -> MetricReport {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricReport {
        precision,
        recall,
        f1,
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        confusion: *cm,
    }
}
