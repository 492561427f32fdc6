//! Multiclass precision, recall and F1 over the three risk classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RiskClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
    pub per_class: [ClassScores; 3],
    /// `confusion[truth][predicted]`
    pub confusion: [[usize; 3]; 3],
    pub diagnostics: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged scores. Undefined ratios (zero denominators) count as 0 and
/// are reported in `diagnostics`; a class absent from both inputs still
/// contributes its 0 to each macro average.
pub fn evaluate(predictions: &[RiskClass], labels: &[RiskClass]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, t) in predictions.iter().zip(labels) {
        confusion[t.index()][p.index()] += 1;
    }

    let mut diagnostics = Vec::new();
    let mut per_class = [ClassScores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        support: 0,
    }; 3];
    for class in RiskClass::ALL {
        let c = class.index();
        let tp = confusion[c][c];
        let predicted: usize = (0..3).map(|t| confusion[t][c]).sum();
        let support: usize = confusion[c].iter().sum();
        match (support, predicted) {
            (0, 0) => diagnostics.push(format!(
                "class {class} absent from labels and predictions; scored 0"
            )),
            (0, _) => diagnostics.push(format!("class {class} absent from labels; recall scored 0")),
            (_, 0) => diagnostics.push(format!("class {class} never predicted; precision scored 0")),
            _ => {}
        }
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class[c] = ClassScores {
            precision,
            recall,
            f1,
            support,
        };
    }

    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        macro_f1: mean(|s| s.f1),
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        accuracy: ratio(correct, labels.len()),
        per_class,
        confusion,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use RiskClass::*;

    #[test]
    fn perfect_predictions() {
        let y = [Low, Medium, High, High, Low];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.accuracy, 1.0);
        assert!(m.diagnostics.is_empty());
    }

    #[test]
    fn all_high_on_balanced_truth() {
        let m = evaluate(&[High, High, High], &[Low, Medium, High]).unwrap();
        assert_eq!(m.per_class[2].f1, 0.5);
        assert!((m.macro_f1 - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.confusion[0][2], 1);
        assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 3);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let m = evaluate(&[Low, Low], &[Low, Low]).unwrap();
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.diagnostics.len(), 2);
        assert!(m.diagnostics.iter().all(|d| d.contains("absent from labels and predictions")));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(evaluate(&[Low], &[]).is_err());
    }

    #[test]
    fn matches_hand_counted_confusion() {
        let truth = [Low, Low, Low, Low, Medium, Medium, Medium, Medium, High, High, High, High];
        let pred = [Low, Low, Low, Medium, Low, Medium, Medium, High, Low, Medium, Medium, High];
        let m = evaluate(&pred, &truth).unwrap();
        assert_eq!(m.confusion, [[3, 1, 0], [1, 2, 1], [1, 2, 1]]);
        // Low: P 3/5 R 3/4; Medium: P 2/5 R 2/4; High: P 1/2 R 1/4
        let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let expect = (f1(0.6, 0.75) + f1(0.4, 0.5) + f1(0.5, 0.25)) / 3.0;
        assert!((m.macro_f1 - expect).abs() < 1e-12);
        assert!((m.accuracy - 0.5).abs() < 1e-12);
    }
}
