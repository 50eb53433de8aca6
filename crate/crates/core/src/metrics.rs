//! Confusion matrices and precision / recall / F1 / accuracy.
//!
//! A `None` prediction is a NoLabel outcome: it is tallied per true class
//! outside the 3×3 grid. It counts against recall and accuracy of the true
//! class and is never a prediction of any class, so it cannot change
//! precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes, both in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
    /// NoLabel predictions per true class.
    pub no_label: [usize; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[usize; 3]; 3], no_label: [usize; 3]) -> Self {
        Self { counts, no_label }
    }

    /// Records that landed in the grid.
    pub fn grid_total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn no_label_total(&self) -> usize {
        self.no_label.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.grid_total() + self.no_label_total()
    }

    pub fn true_positives(&self, class: SentimentLabel) -> usize {
        let c = class.index();
        self.counts[c][c]
    }

    pub fn predicted_as(&self, class: SentimentLabel) -> usize {
        let c = class.index();
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// True-class support, NoLabel outcomes included.
    pub fn support(&self, class: SentimentLabel) -> usize {
        let c = class.index();
        self.counts[c].iter().sum::<usize>() + self.no_label[c]
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|c| self.counts[c][c]).sum()
    }

    /// CSV with one row per true class and a trailing `no_label` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred,positive,neutral,negative,no_label\n");
        for label in SentimentLabel::ALL {
            let c = label.index();
            let row = &self.counts[c];
            let _ = writeln!(out, "{label},{},{},{},{}", row[0], row[1], row[2], self.no_label[c]);
        }
        out
    }
}

/// Builds the confusion matrix for aligned true labels and predictions.
pub fn confusion(y_true: &[SentimentLabel], y_pred: &[Option<SentimentLabel>]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch(format!("{} true labels but {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("no records to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::from_counts([[0; 3]; 3], [0; 3]);
    for (t, p) in y_true.iter().zip(y_pred) {
        match p {
            Some(p) => cm.counts[t.index()][p.index()] += 1,
            None => cm.no_label[t.index()] += 1,
        }
    }
    Ok(cm)
}

/// A ratio plus whether its denominator was zero (value is then 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize) -> Ratio {
    if den == 0 {
        Ratio { value: 0.0, zero_division: true }
    } else {
        Ratio { value: num as f64 / den as f64, zero_division: false }
    }
}

/// `TP / (TP + FP)`
pub fn precision(cm: &ConfusionMatrix, class: SentimentLabel) -> Ratio {
    ratio(cm.true_positives(class), cm.predicted_as(class))
}

/// `TP / (TP + FN)`, where NoLabel outcomes are false negatives.
pub fn recall(cm: &ConfusionMatrix, class: SentimentLabel) -> Ratio {
    ratio(cm.true_positives(class), cm.support(class))
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / sum
    }
}

/// `trace / (grid records + NoLabel records)`
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.trace(), cm.total()).value
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: SentimentLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub precision_zero_division: bool,
    pub recall_zero_division: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    /// Weighted by true-class support.
    pub weighted_avg: Averages,
    pub micro_avg: Averages,
    pub no_label: usize,
    pub n: usize,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// Per-class recall, the reading used for "accuracy per label".
    pub fn per_class_recall(&self) -> [f64; 3] {
        [0, 1, 2].map(|c| self.per_class[c].recall)
    }

    pub fn class(&self, label: SentimentLabel) -> &ClassMetrics {
        &self.per_class[label.index()]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn report(cm: &ConfusionMatrix) -> EvalReport {
    let per_class: Vec<ClassMetrics> = SentimentLabel::ALL
        .into_iter()
        .map(|label| {
            let p = precision(cm, label);
            let r = recall(cm, label);
            ClassMetrics {
                label,
                precision: p.value,
                recall: r.value,
                f1: f1(p.value, r.value),
                support: cm.support(label),
                precision_zero_division: p.zero_division,
                recall_zero_division: r.zero_division,
            }
        })
        .collect();
    let n = cm.total();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / n as f64
        }
    };
    let micro_p = ratio(cm.trace(), cm.grid_total()).value;
    let micro_r = ratio(cm.trace(), n).value;
    EvalReport {
        accuracy: accuracy(cm),
        macro_avg: Averages { precision: mean(|m| m.precision), recall: mean(|m| m.recall), f1: mean(|m| m.f1) },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
        micro_avg: Averages { precision: micro_p, recall: micro_r, f1: f1(micro_p, micro_r) },
        per_class,
        no_label: cm.no_label_total(),
        n,
        confusion: cm.clone(),
    }
}

/// Decimal half-up rounding, tolerant of binary representation error
/// (0.8295 rounds to 0.830 even though it is stored as 0.82949999...).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let nudge = 1e-9 * scaled.abs().max(1.0);
    (scaled + 0.5 + nudge).floor() / scale
}

fn fmt3(x: f64) -> String {
    format!("{:.3}", round_half_up(x, 3))
}

fn capitalized(label: SentimentLabel) -> &'static str {
    match label {
        SentimentLabel::Positive => "Positive",
        SentimentLabel::Neutral => "Neutral",
        SentimentLabel::Negative => "Negative",
    }
}

/// Per-class table: Sentiment | Precision | Recall | F1-score.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = format!("{:<10} {:>9} {:>9} {:>9}\n", "Sentiment", "Precision", "Recall", "F1-score");
    for m in &report.per_class {
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9}",
            capitalized(m.label),
            fmt3(m.precision),
            fmt3(m.recall),
            fmt3(m.f1)
        );
    }
    let _ = writeln!(out, "{:<10} {:>9}", "Accuracy", fmt3(report.accuracy));
    if report.no_label > 0 {
        let _ = writeln!(out, "{:<10} {:>9}", "NoLabel", report.no_label);
    }
    out
}

/// Model comparison table of macro-averaged precision, recall and F1, in
/// the given order.
pub fn compare(reports: &[(String, EvalReport)]) -> String {
    let width = reports.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$} {:>9} {:>9} {:>9}\n", "Model", "Precision", "Recall", "F1-score");
    for (name, r) in reports {
        let _ = writeln!(
            out,
            "{:<width$} {:>9} {:>9} {:>9}",
            name,
            fmt3(r.macro_avg.precision),
            fmt3(r.macro_avg.recall),
            fmt3(r.macro_avg.f1)
        );
    }
    out
}

/// Whether a published `(precision, recall, f1)` triple, each rounded to
/// `decimals`, could come from one underlying precision/recall pair. F1 is
/// monotone in both arguments, so the reachable F1 range over the rounding
/// box is spanned by its corners.
pub fn rounded_triple_is_consistent(precision: f64, recall: f64, f1_score: f64, decimals: u32) -> bool {
    let half = 0.5 * 10f64.powi(-(decimals as i32));
    let lo = f1(precision - half, recall - half);
    let hi = f1(precision + half, recall + half);
    f1_score + half >= lo && f1_score - half <= hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let y = [Positive, Neutral, Negative, Neutral];
        let pred: Vec<_> = y.iter().copied().map(Some).collect();
        let cm = confusion(&y, &pred).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
        for l in SentimentLabel::ALL {
            assert_eq!(precision(&cm, l).value, 1.0);
            assert_eq!(recall(&cm, l).value, 1.0);
        }
        assert_eq!(accuracy(&cm), 1.0);
    }

    #[test]
    fn swapped_pair_fills_anti_diagonal() {
        let cm = confusion(&[Positive, Negative], &[Some(Negative), Some(Positive)]).unwrap();
        assert_eq!(cm.counts[0][2], 1);
        assert_eq!(cm.counts[2][0], 1);
        assert_eq!(cm.trace(), 0);
    }

    #[test]
    fn no_label_is_tallied_outside_the_grid() {
        let cm = confusion(&[Positive, Neutral, Negative], &[Some(Positive), None, Some(Negative)]).unwrap();
        assert_eq!(cm.grid_total(), 2);
        assert_eq!(cm.no_label_total(), 1);
        assert!((accuracy(&cm) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall(&cm, Neutral).value, 0.0);
        // Neutral was never predicted.
        assert!(precision(&cm, Neutral).zero_division);
        assert_eq!(precision(&cm, Positive).value, 1.0);
    }

    #[test]
    fn all_no_label_has_zero_accuracy() {
        let cm = confusion(&[Positive, Neutral], &[None, None]).unwrap();
        assert_eq!(accuracy(&cm), 0.0);
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion(&[Positive], &[]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn precision_recall_from_counts() {
        // Positive row: TP 97, FN 4; positive column: FP 3.
        let cm = ConfusionMatrix::from_counts([[97, 2, 2], [1, 50, 0], [2, 0, 50]], [0; 3]);
        assert!((precision(&cm, Positive).value - 0.970).abs() < 1e-12);
        assert!((recall(&cm, Positive).value - 97.0 / 101.0).abs() < 1e-12);
        assert_eq!(round_half_up(recall(&cm, Positive).value, 3), 0.960);
    }

    #[test]
    fn f1_zero_when_both_zero() {
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!(f1(1.0, 1.0), 1.0);
    }

    #[test]
    fn accuracy_from_recall_diagonal() {
        let cm = ConfusionMatrix::from_counts([[97, 2, 1], [8, 84, 8], [9, 10, 81]], [0; 3]);
        assert_eq!(cm.total(), 300);
        assert!((accuracy(&cm) - 262.0 / 300.0).abs() < 1e-15);
        assert_eq!(report(&cm).per_class_recall(), [0.97, 0.84, 0.81]);
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(0.8295, 3), 0.830);
        assert_eq!(round_half_up(0.0005, 3), 0.001);
        assert_eq!(round_half_up(0.96649, 3), 0.966);
        assert_eq!(round_half_up(0.87333, 3), 0.873);
    }

    #[test]
    fn compare_keeps_order() {
        let a = report(&ConfusionMatrix::from_counts([[1, 0, 0], [0, 1, 0], [0, 0, 1]], [0; 3]));
        let b = report(&ConfusionMatrix::from_counts([[0, 1, 0], [0, 1, 0], [0, 0, 1]], [0; 3]));
        let single = compare(&[("only".into(), a.clone())]);
        assert_eq!(single.lines().count(), 2);
        let both = compare(&[("zeta".into(), b), ("alpha".into(), a)]);
        let names: Vec<_> = both.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(names, ["zeta", "alpha"]);
    }

    #[test]
    fn rendered_table_layout() {
        let cm = ConfusionMatrix::from_counts([[2, 0, 0], [0, 1, 1], [0, 0, 1]], [0, 0, 1]);
        let text = render_table(&report(&cm));
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["Sentiment", "Precision", "Recall", "F1-score"]);
        assert!(lines[1].starts_with("Positive"));
        assert!(lines[2].contains("0.500"));
        assert!(text.contains("NoLabel"));
    }

    #[test]
    fn csv_export() {
        let cm = ConfusionMatrix::from_counts([[2, 0, 0], [0, 1, 1], [0, 0, 1]], [0, 0, 1]);
        let csv = cm.to_csv();
        assert_eq!(csv.lines().nth(3), Some("negative,0,0,1,1"));
    }
}
