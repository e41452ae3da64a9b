use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predicted.len() != labels.len() || labels.is_empty() {
            return Err(Error::Contract(format!(
                "evaluation needs matching non-empty predictions and labels ({} vs {})",
                predicted.len(),
                labels.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &y) in predicted.iter().zip(labels) {
            if p >= num_classes || y >= num_classes {
                return Err(Error::Label {
                    label: p.max(y),
                    classes: num_classes,
                });
            }
            confusion[y][p] += 1;
        }
        let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let f1: f64 = (0..num_classes)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
                let actual_c: usize = confusion[c].iter().sum();
                let precision = if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 };
                let recall = if actual_c > 0 { tp / actual_c as f64 } else { 0.0 };
                if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                }
            })
            .sum();
        Ok(Self {
            accuracy: correct as f64 / labels.len() as f64,
            macro_f1: f1 / num_classes as f64,
            confusion,
        })
    }
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: PartialOrd + Copy>(data: &[T], cols: usize) -> Vec<usize> {
    data.chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1, 0];
        let r = EvalReport::from_predictions(&y, &y, 3).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        assert_eq!(r.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn all_class_zero() {
        let y = [0, 1, 2, 0, 1, 2];
        let r = EvalReport::from_predictions(&[0; 6], &y, 3).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        // Class 0: precision 1/3, recall 1, F1 0.5.
        assert!((r.macro_f1 - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_rows(&[1.0, 3.0, 3.0, 0.0, 0.0, 0.0], 3), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn confusion_rows_and_trace(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (p, y): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = EvalReport::from_predictions(&p, &y, 4).unwrap();
            for c in 0..4 {
                prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), y.iter().filter(|&&l| l == c).count());
            }
            let trace: usize = (0..4).map(|c| r.confusion[c][c]).sum();
            prop_assert_eq!(r.accuracy, trace as f64 / y.len() as f64);
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
        }
    }
}
