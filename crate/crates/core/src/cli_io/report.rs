//! Plain-text and CSV renderings of reports, loss curves and attention maps.

use std::fmt::Write as _;

use crate::model::AttentionRecord;
use crate::text::Label;
use crate::training::{Averages, ConfusionMatrix, CrossValReport, EpochTrace, EvalReport};

use super::IoError;

/// Per-class precision, recall, F1 and support, then accuracy and the macro
/// and weighted averages.
pub fn format_report(r: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1-score", "support").unwrap();
    for label in Label::ALL {
        let m = r.class(label);
        writeln!(
            s,
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            label.name(),
            m.precision,
            m.recall,
            m.f1,
            m.support
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "{:<14}{:>10}{:>10}{:>10.4}{:>10}", "accuracy", "", "", r.accuracy, r.total).unwrap();
    let avg = |s: &mut String, name: &str, a: &Averages| {
        writeln!(
            s,
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            name, a.precision, a.recall, a.f1, r.total
        )
        .unwrap();
    };
    avg(&mut s, "macro avg", &r.macro_avg);
    avg(&mut s, "weighted avg", &r.weighted_avg);
    s
}

pub fn report_json(r: &EvalReport) -> Result<String, IoError> {
    serde_json::to_string_pretty(r).map_err(|e| IoError::Header(e.to_string()))
}

fn csv_string(rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, IoError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

/// Rows are true labels, columns predictions.
pub fn confusion_csv(m: &ConfusionMatrix) -> Result<String, IoError> {
    let header = std::iter::once("true\\predicted".to_string()).chain(Label::ALL.iter().map(|l| l.name().to_string()));
    let rows = Label::ALL.iter().map(|t| {
        std::iter::once(t.name().to_string())
            .chain(m.counts[t.index()].iter().map(u64::to_string))
            .collect()
    });
    csv_string(std::iter::once(header.collect()).chain(rows))
}

pub fn loss_curve_csv(trace: &EpochTrace) -> Result<String, IoError> {
    let header = vec!["epoch".into(), "train_loss".into(), "val_loss".into()];
    let rows = trace
        .train_loss
        .iter()
        .zip(&trace.val_loss)
        .enumerate()
        .map(|(i, (t, v))| vec![(i + 1).to_string(), t.to_string(), v.to_string()]);
    csv_string(std::iter::once(header).chain(rows))
}

/// Square matrix with the token strings as header row and first column.
pub fn attention_csv(rec: &AttentionRecord) -> Result<String, IoError> {
    let header = std::iter::once(String::new()).chain(rec.tokens.iter().cloned()).collect();
    let rows = rec.tokens.iter().enumerate().map(|(r, tok)| {
        std::iter::once(tok.clone())
            .chain(rec.weights.row(r).iter().map(f64::to_string))
            .collect()
    });
    csv_string(std::iter::once(header).chain(rows))
}

pub fn crossval_csv(cv: &CrossValReport) -> Result<String, IoError> {
    let header = ["fold", "accuracy", "macro_f1", "weighted_f1", "support"].map(String::from).to_vec();
    let rows = cv.folds.iter().map(|f| {
        vec![
            (f.fold + 1).to_string(),
            f.report.accuracy.to_string(),
            f.report.macro_avg.f1.to_string(),
            f.report.weighted_avg.f1.to_string(),
            f.report.total.to_string(),
        ]
    });
    let n = cv.folds.len() as f64;
    let mean = |g: fn(&EvalReport) -> f64| (cv.folds.iter().map(|f| g(&f.report)).sum::<f64>() / n).to_string();
    let total: u64 = cv.folds.iter().map(|f| f.report.total).sum();
    let last = vec![
        "mean".into(),
        cv.mean_accuracy.to_string(),
        mean(|r| r.macro_avg.f1),
        mean(|r| r.weighted_avg.f1),
        total.to_string(),
    ];
    csv_string(std::iter::once(header).chain(rows).chain(std::iter::once(last)))
}

/// One line per message: label and the three class probabilities.
pub fn prediction_line(label: Label, probs: &[f64]) -> String {
    let p: Vec<String> = probs.iter().map(|v| format!("{v:.6}")).collect();
    format!("{},{}", label.name(), p.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn report() -> EvalReport {
        let truth = [Label::Normal, Label::Normal, Label::Promo, Label::Smish];
        let pred = [Label::Normal, Label::Smish, Label::Promo, Label::Smish];
        EvalReport::from_predictions(&truth, &pred)
    }

    #[test]
    fn report_lists_every_row() {
        let text = format_report(&report());
        for row in ["Normal", "Promo", "Smish", "accuracy", "macro avg", "weighted avg", "precision"] {
            assert!(text.contains(row), "{row}");
        }
        assert!(text.contains("0.7500"));
    }

    #[test]
    fn confusion_layout() {
        let csv = confusion_csv(&report().confusion).unwrap();
        assert_eq!(
            csv,
            "true\\predicted,Normal,Promo,Smish\nNormal,1,0,1\nPromo,0,1,0\nSmish,0,0,1\n"
        );
    }

    #[test]
    fn loss_curve_layout() {
        let t = EpochTrace {
            train_loss: vec![0.5, 0.25],
            val_loss: vec![0.75, 0.125],
        };
        assert_eq!(loss_curve_csv(&t).unwrap(), "epoch,train_loss,val_loss\n1,0.5,0.75\n2,0.25,0.125\n");
    }

    #[test]
    fn attention_layout() {
        let rec = AttentionRecord {
            layer: 0,
            head: 0,
            weights: Tensor::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]),
            token_ids: vec![2, 3],
            tokens: vec!["[CLS]".into(), "[SEP]".into()],
        };
        assert_eq!(attention_csv(&rec).unwrap(), ",[CLS],[SEP]\n[CLS],0.5,0.5\n[SEP],0.25,0.75\n");
    }

    #[test]
    fn prediction_format() {
        assert_eq!(prediction_line(Label::Promo, &[0.1, 0.7, 0.2]), "Promo,0.100000,0.700000,0.200000");
    }
}
