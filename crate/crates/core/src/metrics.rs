//! Classification metrics: accuracy, macro/weighted F1 and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub f1_macro: f64,
    /// Support-weighted F1; the headline F1 figure in reports.
    pub f1_weighted: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub confusion_row_normalized: Vec<Vec<f64>>,
}

/// Scores `pred` against `truth` over `classes` classes.
///
/// Classes with zero support are left out of the macro mean. A class that is
/// never predicted and never true gets F1 0 but carries no weight anywhere.
pub fn evaluate_metrics(pred: &[usize], truth: &[usize], classes: usize) -> Result<ClassMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no instances to evaluate".into()));
    }
    if let Some(&label) = pred.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }

    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let n = pred.len();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<usize> = (0..classes)
        .map(|c| confusion.iter().map(|row| row[c]).sum())
        .collect();

    let per_class_f1: Vec<f64> = (0..classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let denom = (support[c] + predicted[c]) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect();

    let present: Vec<usize> = (0..classes).filter(|&c| support[c] > 0).collect();
    let f1_macro = present.iter().map(|&c| per_class_f1[c]).sum::<f64>() / present.len() as f64;
    let f1_weighted = present
        .iter()
        .map(|&c| per_class_f1[c] * support[c] as f64)
        .sum::<f64>()
        / n as f64;

    let confusion_row_normalized = confusion
        .iter()
        .zip(&support)
        .map(|(row, &s)| {
            row.iter()
                .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                .collect()
        })
        .collect();

    Ok(ClassMetrics {
        accuracy: correct as f64 / n as f64,
        f1_macro,
        f1_weighted,
        per_class_f1,
        support,
        confusion,
        confusion_row_normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EXACT_TOL;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let m = evaluate_metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1_macro, 1.0);
        assert_eq!(m.f1_weighted, 1.0);
    }

    #[test]
    fn half_right_two_classes() {
        let m = evaluate_metrics(&[0, 0], &[0, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < EXACT_TOL);
        assert_eq!(m.per_class_f1[1], 0.0);
        assert!((m.f1_macro - 1.0 / 3.0).abs() < EXACT_TOL);
    }

    #[test]
    fn total_miss() {
        let m = evaluate_metrics(&[1, 1, 1], &[0, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.f1_macro, 0.0);
        // Class 1 has no support and is excluded from the macro mean.
        assert_eq!(m.support, vec![3, 0]);
        assert_eq!(m.confusion_row_normalized[1], vec![0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate_metrics(&[0], &[0, 1], 2), Err(Error::Shape(_))));
        assert!(matches!(
            evaluate_metrics(&[0, 3], &[0, 1], 2),
            Err(Error::LabelOutOfRange { label: 3, classes: 2 })
        ));
        assert!(evaluate_metrics(&[], &[], 2).is_err());
    }

    fn labels(n: usize, c: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (
            proptest::collection::vec(0..c, n),
            proptest::collection::vec(0..c, n),
        )
    }

    proptest! {
        #[test]
        fn accuracy_is_confusion_trace((pred, truth) in labels(40, 4)) {
            let m = evaluate_metrics(&pred, &truth, 4).unwrap();
            let total: usize = m.confusion.iter().flatten().sum();
            let trace: usize = (0..4).map(|c| m.confusion[c][c]).sum();
            prop_assert_eq!(total, 40);
            prop_assert_eq!(m.accuracy, trace as f64 / total as f64);
            for (row, &s) in m.confusion_row_normalized.iter().zip(&m.support) {
                let sum: f64 = row.iter().sum();
                if s > 0 { prop_assert!((sum - 1.0).abs() < EXACT_TOL); } else { prop_assert_eq!(sum, 0.0); }
            }
        }

        #[test]
        fn joint_permutation_invariance((pred, truth) in labels(30, 3), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut order: Vec<usize> = (0..30).collect();
            order.shuffle(&mut crate::rng::seeded_rng(seed));
            let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
            let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
            let a = evaluate_metrics(&pred, &truth, 3).unwrap();
            let b = evaluate_metrics(&p2, &t2, 3).unwrap();
            prop_assert_eq!(a.confusion, b.confusion);
            prop_assert!((a.f1_macro - b.f1_macro).abs() < EXACT_TOL);
            prop_assert!((a.f1_weighted - b.f1_weighted).abs() < EXACT_TOL);
        }

        #[test]
        fn macro_equals_weighted_under_equal_support(pred in proptest::collection::vec(0usize..3, 30)) {
            let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
            let m = evaluate_metrics(&pred, &truth, 3).unwrap();
            prop_assert!((m.f1_macro - m.f1_weighted).abs() < EXACT_TOL);
        }
    }
}
