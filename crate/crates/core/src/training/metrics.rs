//! Confusion matrix and per-class precision / recall / F1 with macro and
//! support-weighted averages.

use serde::{Deserialize, Serialize};

use crate::text::Label;

/// Rows are true labels, columns predictions, both in class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; Label::COUNT]; Label::COUNT],
}

impl ConfusionMatrix {
    pub fn from_pairs(truth: &[Label], predicted: &[Label]) -> Self {
        assert_eq!(truth.len(), predicted.len(), "truth/prediction length mismatch");
        let mut m = Self::default();
        for (t, p) in truth.iter().zip(predicted) {
            m.counts[t.index()][p.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..Label::COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..Label::COUNT).filter(|&r| r != c).map(|r| self.counts[r][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..Label::COUNT).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    pub fn true_negatives(&self, c: usize) -> u64 {
        self.total() - self.true_positives(c) - self.false_positives(c) - self.false_negatives(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl ClassMetrics {
    /// Zero denominators yield 0 rather than NaN.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
            support: tp + fn_,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: [ClassMetrics; Label::COUNT],
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let per_class: [ClassMetrics; Label::COUNT] = std::array::from_fn(|c| {
            ClassMetrics::from_counts(
                confusion.true_positives(c),
                confusion.false_positives(c),
                confusion.false_negatives(c),
            )
        });
        let total = confusion.total();
        Self {
            confusion,
            accuracy: if total == 0 { 0.0 } else { confusion.trace() as f64 / total as f64 },
            macro_avg: macro_average(&per_class),
            weighted_avg: weighted_average(&per_class),
            per_class,
            total,
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Self {
        Self::from_confusion(ConfusionMatrix::from_pairs(truth, predicted))
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

pub fn macro_average(per_class: &[ClassMetrics]) -> Averages {
    let n = per_class.len() as f64;
    Averages {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

pub fn weighted_average(per_class: &[ClassMetrics]) -> Averages {
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    if total == 0 {
        return Averages {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let w = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Averages {
        precision: w(|m| m.precision),
        recall: w(|m| m.recall),
        f1: w(|m| m.f1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(i: usize) -> Label {
        Label::from_index(i).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let truth = [Label::Normal, Label::Promo, Label::Smish, Label::Smish];
        let r = EvalReport::from_predictions(&truth, &truth);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(r.macro_avg.f1, 1.0);
    }

    #[test]
    fn missing_prediction_class_has_zero_precision() {
        let truth = [Label::Normal, Label::Promo];
        let pred = [Label::Normal, Label::Normal];
        let r = EvalReport::from_predictions(&truth, &pred);
        assert_eq!(r.class(Label::Promo).precision, 0.0);
        assert_eq!(r.class(Label::Promo).f1, 0.0);
        assert_eq!(r.class(Label::Smish).support, 0);
        assert_eq!(r.class(Label::Smish).recall, 0.0);
    }

    #[test]
    fn weighted_f1_of_reference_table_rows() {
        let rows = [(0.98, 178), (0.97, 90), (0.98, 190)];
        let per_class: Vec<ClassMetrics> = rows
            .iter()
            .map(|&(f1, support)| ClassMetrics {
                precision: 0.0,
                recall: 0.0,
                f1,
                support,
            })
            .collect();
        let w = weighted_average(&per_class);
        assert!((w.f1 - 0.98).abs() <= 0.005, "{}", w.f1);
    }

    proptest! {
        #[test]
        fn matches_brute_force_tally(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200)) {
            let truth: Vec<Label> = pairs.iter().map(|p| label(p.0)).collect();
            let pred: Vec<Label> = pairs.iter().map(|p| label(p.1)).collect();
            let r = EvalReport::from_predictions(&truth, &pred);
            let mut correct = 0;
            for c in 0..3 {
                let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
                for (t, p) in &pairs {
                    match (*t == c, *p == c) {
                        (true, true) => tp += 1,
                        (false, true) => fp += 1,
                        (true, false) => fn_ += 1,
                        (false, false) => tn += 1,
                    }
                }
                prop_assert_eq!(r.confusion.true_negatives(c), tn);
                let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
                prop_assert_eq!(r.per_class[c].precision, p);
                prop_assert_eq!(r.per_class[c].recall, rc);
                prop_assert_eq!(r.per_class[c].f1, f);
                prop_assert_eq!(r.per_class[c].support, tp + fn_);
                correct += tp;
                // One-vs-rest (TP+TN)/(TP+TN+FP+FN) for this class.
                let ovr = (tp + tn) as f64 / (tp + tn + fp + fn_) as f64;
                prop_assert!(ovr >= r.accuracy - 1e-12);
            }
            prop_assert_eq!(r.accuracy, correct as f64 / pairs.len() as f64);
            // Micro-pooled precision and recall both collapse to accuracy.
            let fp: u64 = (0..3).map(|c| r.confusion.false_positives(c)).sum();
            let fn_: u64 = (0..3).map(|c| r.confusion.false_negatives(c)).sum();
            prop_assert!((correct as f64 / (correct + fp) as f64 - r.accuracy).abs() < 1e-12);
            prop_assert!((correct as f64 / (correct + fn_) as f64 - r.accuracy).abs() < 1e-12);
            let f1s: Vec<f64> = r.per_class.iter().map(|m| m.f1).collect();
            let (lo, hi) = f1s.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assert!(r.macro_avg.f1 >= lo - 1e-12 && r.macro_avg.f1 <= hi + 1e-12);
            prop_assert_eq!(r.per_class.iter().map(|m| m.support).sum::<u64>(), r.total);
        }
    }
}
