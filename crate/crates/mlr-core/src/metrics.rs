//! Binary accuracy and support-weighted F1.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(preds: &[bool], labels: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Metrics of one binary task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub confusion: ConfusionCounts,
    pub n_evaluated: usize,
}

/// Per-task evaluation results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
}

fn check_inputs(op: &'static str, preds: &[bool], labels: &[bool]) -> Result<()> {
    if preds.is_empty() {
        return Err(CoreError::data(alloc::format!("{op}: empty input")));
    }
    if preds.len() != labels.len() {
        return Err(CoreError::data(alloc::format!(
            "{op}: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn binary_accuracy(preds: &[bool], labels: &[bool]) -> Result<f64> {
    check_inputs("binary_accuracy", preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn f1_of(tp: usize, fp: usize, fn_: usize) -> f64 {
    // zero-division convention: no predicted and no true positives -> 0
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class F1 averaged with weights equal to each class's true support.
pub fn weighted_f1(preds: &[bool], labels: &[bool]) -> Result<f64> {
    check_inputs("weighted_f1", preds, labels)?;
    let c = ConfusionCounts::from_pairs(preds, labels);
    let f1_pos = f1_of(c.tp, c.fp, c.fn_);
    // class 0 scored with roles swapped: tn are its true positives
    let f1_neg = f1_of(c.tn, c.fn_, c.fp);
    let support_pos = (c.tp + c.fn_) as f64;
    let support_neg = (c.tn + c.fp) as f64;
    let n = preds.len() as f64;
    Ok((support_pos * f1_pos + support_neg * f1_neg) / n)
}

/// Accuracy, weighted F1 and confusion counts of one task.
pub fn evaluate_task(task: &str, preds: &[bool], labels: &[bool]) -> Result<TaskMetrics> {
    Ok(TaskMetrics {
        task: String::from(task),
        accuracy: binary_accuracy(preds, labels)?,
        weighted_f1: weighted_f1(preds, labels)?,
        confusion: ConfusionCounts::from_pairs(preds, labels),
        n_evaluated: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = vec![true, false, true, false];
        assert_eq!(binary_accuracy(&labels, &labels).unwrap(), 1.0);
        assert_eq!(weighted_f1(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn hand_counted_accuracy() {
        let preds = vec![true, false, true, true];
        let labels = vec![true, true, true, false];
        assert_eq!(binary_accuracy(&preds, &labels).unwrap(), 0.5);
    }

    #[test]
    fn complement_predictions_mirror_accuracy() {
        let preds = vec![true, false, true, true, false];
        let labels = vec![true, true, false, true, false];
        let acc = binary_accuracy(&preds, &labels).unwrap();
        let flipped: Vec<bool> = preds.iter().map(|p| !p).collect();
        let acc_f = binary_accuracy(&flipped, &labels).unwrap();
        assert!((acc + acc_f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_half_right_gives_half_f1() {
        let preds = vec![true, true, false, false];
        let labels = vec![true, false, true, false];
        assert!((weighted_f1(&preds, &labels).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_positive_predictions_nine_fourteenths() {
        let preds = vec![true, true, true, true];
        let labels = vec![true, true, true, false];
        // class 1: F1 = 6/7, class 0: F1 = 0, weights 3/4 and 1/4
        let expect = 9.0 / 14.0;
        assert!((weighted_f1(&preds, &labels).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(binary_accuracy(&[], &[]).is_err());
        assert!(weighted_f1(&[], &[]).is_err());
    }

    #[test]
    fn confusion_counts_sum_to_n() {
        let preds = vec![true, false, true, false, true];
        let labels = vec![false, false, true, true, true];
        let m = evaluate_task("t", &preds, &labels).unwrap();
        assert_eq!(m.confusion.total(), m.n_evaluated);
    }
}
