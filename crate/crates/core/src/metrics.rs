//! Classification metrics.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy, macro F1 and confusion matrix over `classes` classes.
///
/// Classes that appear neither in the truth nor in the predictions are left
/// out of the macro mean; any other class without a true positive scores 0.
pub fn evaluate_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Evaluation> {
    if truth.is_empty() {
        return invalid("cannot evaluate an empty split");
    }
    if predicted.len() != truth.len() {
        return invalid(format!("{} predictions for {} labels", predicted.len(), truth.len()));
    }
    if let Some(&c) = predicted.iter().chain(truth).find(|&&c| c >= classes) {
        return invalid(format!("class {c} out of range for {classes} classes"));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut f1_sum = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        let tp = confusion[c][c];
        let actual: usize = confusion[c].iter().sum();
        let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted_c == 0 {
            continue;
        }
        counted += 1;
        if tp > 0 {
            f1_sum += 2.0 * tp as f64 / (actual + predicted_c) as f64;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: if counted == 0 { 0.0 } else { f1_sum / counted as f64 },
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let e = evaluate_predictions(&y, &y, 3).unwrap();
        assert_eq!((e.accuracy, e.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn single_class_predictions_on_balanced_binary() {
        let truth = [0, 1, 0, 1, 0, 1];
        let e = evaluate_predictions(&[0; 6], &truth, 2).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert!((e.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let y = [0, 1, 0, 1];
        let e = evaluate_predictions(&y, &y, 5).unwrap();
        assert_eq!(e.macro_f1, 1.0);
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert!(evaluate_predictions(&[], &[], 2).is_err());
        assert!(evaluate_predictions(&[0], &[0, 1], 2).is_err());
        assert!(evaluate_predictions(&[2], &[0], 2).is_err());
    }

    proptest! {
        #[test]
        fn confusion_matrix_is_consistent(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let e = evaluate_predictions(&p, &t, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&e.accuracy));
            prop_assert!((0.0..=1.0).contains(&e.macro_f1));
            let total: usize = e.confusion.iter().flatten().sum();
            prop_assert_eq!(total, t.len());
            for c in 0..4 {
                let row: usize = e.confusion[c].iter().sum();
                prop_assert_eq!(row, t.iter().filter(|&&x| x == c).count());
            }
        }
    }
}
