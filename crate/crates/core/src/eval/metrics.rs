use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DecisionValue;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    Empty,
    #[error("score {0} outside 1..=5")]
    OutOfRangeScore(u8),
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch {
            predictions: a,
            labels: b,
        });
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Binary confusion counts relative to `positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub positive: DecisionValue,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        predictions: &[DecisionValue],
        labels: &[DecisionValue],
        positive: DecisionValue,
    ) -> Result<Self, MetricsError> {
        check_lengths(predictions.len(), labels.len())?;
        let mut cm = ConfusionMatrix {
            positive,
            tp: 0,
            tn: 0,
            fp: 0,
            fn_: 0,
        };
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == positive, l == positive) {
                (true, true) => cm.tp += 1,
                (false, false) => cm.tn += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn n_pos(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn n_neg(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same counts seen from the other class.
    pub fn flipped(&self) -> Self {
        ConfusionMatrix {
            positive: other(self.positive),
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

fn other(v: DecisionValue) -> DecisionValue {
    match v {
        DecisionValue::Evacuate => DecisionValue::Stay,
        DecisionValue::Stay => DecisionValue::Evacuate,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
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
    fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let precision = ratio(cm.tp, cm.tp + cm.fp);
        let recall = ratio(cm.tp, cm.tp + cm.fn_);
        ClassMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: cm.n_pos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub stay: ClassMetrics,
    pub evacuate: ClassMetrics,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

impl MetricsReport {
    /// Rows in display order: the positive class first.
    pub fn class_rows(&self, positive: DecisionValue) -> [(DecisionValue, &ClassMetrics); 2] {
        match positive {
            DecisionValue::Stay => [
                (DecisionValue::Stay, &self.stay),
                (DecisionValue::Evacuate, &self.evacuate),
            ],
            DecisionValue::Evacuate => [
                (DecisionValue::Evacuate, &self.evacuate),
                (DecisionValue::Stay, &self.stay),
            ],
        }
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> MetricsReport {
    let (stay_cm, evac_cm) = match cm.positive {
        DecisionValue::Stay => (*cm, cm.flipped()),
        DecisionValue::Evacuate => (cm.flipped(), *cm),
    };
    let stay = ClassMetrics::from_confusion(&stay_cm);
    let evacuate = ClassMetrics::from_confusion(&evac_cm);
    let n = cm.total();
    let weighted_f1 = if n == 0 {
        0.0
    } else {
        (stay.f1 * stay.support as f64 + evacuate.f1 * evacuate.support as f64) / n as f64
    };
    MetricsReport {
        n,
        stay,
        evacuate,
        accuracy: ratio(cm.tp + cm.tn, n),
        macro_f1: (stay.f1 + evacuate.f1) / 2.0,
        weighted_f1,
        mse: None,
    }
}

pub fn compute_metrics(
    predictions: &[DecisionValue],
    labels: &[DecisionValue],
) -> Result<MetricsReport, MetricsError> {
    let cm = ConfusionMatrix::from_predictions(predictions, labels, DecisionValue::Stay)?;
    Ok(metrics_from_confusion(&cm))
}

pub fn compute_mse(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(predicted.len(), actual.len())?;
    let sum: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// 5x5 counts, rows = actual score, columns = predicted score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreConfusion {
    pub counts: [[u64; 5]; 5],
}

pub fn score_confusion(predicted: &[u8], actual: &[u8]) -> Result<ScoreConfusion, MetricsError> {
    if predicted.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predicted.len(),
            labels: actual.len(),
        });
    }
    let mut counts = [[0u64; 5]; 5];
    for (&p, &a) in predicted.iter().zip(actual) {
        for s in [p, a] {
            if !(1..=5).contains(&s) {
                return Err(MetricsError::OutOfRangeScore(s));
            }
        }
        counts[a as usize - 1][p as usize - 1] += 1;
    }
    Ok(ScoreConfusion { counts })
}

impl ScoreConfusion {
    /// Each row divided by its total; empty rows stay zero.
    pub fn normalized(&self) -> [[f64; 5]; 5] {
        let mut out = [[0.0; 5]; 5];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let total: u64 = counts.iter().sum();
            if total > 0 {
                for (o, &c) in row.iter_mut().zip(counts) {
                    *o = c as f64 / total as f64;
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("actual\\predicted,1,2,3,4,5\n");
        for (i, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{},{}", i + 1, cells.join(","));
        }
        s
    }

    /// Row-normalized heatmap, darker cells for larger shares.
    pub fn to_svg(&self, title: &str) -> String {
        const CELL: usize = 48;
        const MARGIN: usize = 40;
        let size = MARGIN + 5 * CELL + 10;
        let norm = self.normalized();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="12">"#,
            size + 20
        );
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="16">{}</text>"#,
            escape_xml(title)
        );
        for (i, row) in norm.iter().enumerate() {
            let y = MARGIN + i * CELL;
            let _ = writeln!(
                s,
                r#"<text x="20" y="{}">{}</text>"#,
                y + CELL / 2 + 4,
                i + 1
            );
            for (j, &v) in row.iter().enumerate() {
                let x = MARGIN + j * CELL;
                let shade = 255 - (v * 200.0).round() as u8;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="white"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle">{v:.2}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 4
                );
            }
        }
        for j in 0..5 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                MARGIN + j * CELL + CELL / 2,
                MARGIN + 5 * CELL + 16,
                j + 1
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use DecisionValue::{Evacuate as E, Stay as S};

    #[test]
    fn perfect_classifier() {
        let r = compute_metrics(&[S, E, E], &[S, E, E]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.stay.f1, 1.0);
        assert_eq!(r.evacuate.f1, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn one_class_predictor_gets_zero_not_nan() {
        let r = compute_metrics(&[E, E, E], &[S, E, E]).unwrap();
        assert_eq!(r.stay.precision, 0.0);
        assert_eq!(r.stay.f1, 0.0);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            compute_metrics(&[S], &[]),
            Err(MetricsError::LengthMismatch {
                predictions: 1,
                labels: 0
            })
        );
        assert_eq!(compute_metrics(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(
            score_confusion(&[0], &[1]),
            Err(MetricsError::OutOfRangeScore(0))
        );
    }

    #[test]
    fn mse_cases() {
        assert_eq!(compute_mse(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert_eq!(compute_mse(&[4.0, 4.0], &[4.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn score_confusion_counts() {
        let c = score_confusion(&[2, 2], &[1, 1]).unwrap();
        assert_eq!(c.counts[0][1], 2);
        let n = c.normalized();
        assert_eq!(n[0][1], 1.0);
        assert_eq!(n[1].iter().sum::<f64>(), 0.0);
        assert!(c
            .to_csv()
            .starts_with("actual\\predicted,1,2,3,4,5\n1,0,2,0,0,0\n"));
        assert!(c.to_svg("threat").contains("<svg"));
    }
}
