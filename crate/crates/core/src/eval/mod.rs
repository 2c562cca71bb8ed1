//! Metrics, baselines, reports and cross-event evaluation.

pub mod baselines;
pub mod cross_event;
pub mod logistic;
pub mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{DecisionValue, SurveyRecord};
use crate::pipeline::PredictionOutcome;
use metrics::{
    compute_metrics, compute_mse, score_confusion, MetricsError, MetricsReport, ScoreConfusion,
};

/// One labeled row group of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metrics: MetricsReport,
    /// Records without a usable prediction; excluded from the metrics.
    #[serde(default)]
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text table of per-class and overall scores, positive class first.
    pub fn render_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:<8}  {:>9}  {:>6}  {:>6}  {:>8}  {:>8}  {:>11}",
            "Method", "Class", "Precision", "Recall", "F1", "Accuracy", "Macro F1", "Weighted F1"
        );
        for row in &self.rows {
            let m = &row.metrics;
            for (i, (class, c)) in m.class_rows(DecisionValue::Stay).into_iter().enumerate() {
                let class = match class {
                    DecisionValue::Stay => "Stay",
                    DecisionValue::Evacuate => "Evacuate",
                };
                if i == 0 {
                    let _ = writeln!(
                        s,
                        "{:<width$}  {:<8}  {:>9.3}  {:>6.3}  {:>6.3}  {:>8.3}  {:>8.3}  {:>11.3}",
                        row.method,
                        class,
                        c.precision,
                        c.recall,
                        c.f1,
                        m.accuracy,
                        m.macro_f1,
                        m.weighted_f1
                    );
                } else {
                    let _ = writeln!(
                        s,
                        "{:<width$}  {:<8}  {:>9.3}  {:>6.3}  {:>6.3}",
                        "", class, c.precision, c.recall, c.f1
                    );
                }
            }
        }
        s
    }
}

/// Scores the records that produced a prediction; the rest are listed as
/// failed.
pub fn score_predictions<E>(
    label: &str,
    records: &[SurveyRecord],
    predictions: &[Result<DecisionValue, E>],
) -> Result<ReportRow, MetricsError> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut failed = Vec::new();
    for (r, p) in records.iter().zip(predictions) {
        match p {
            Ok(v) => {
                preds.push(*v);
                labels.push(r.decision);
            }
            Err(_) => failed.push(r.record_id.clone()),
        }
    }
    Ok(ReportRow {
        method: label.to_string(),
        metrics: compute_metrics(&preds, &labels)?,
        failed,
    })
}

/// Calibrated perception scores against the survey indicators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptionScores {
    pub threat_predicted: Vec<u8>,
    pub threat_actual: Vec<u8>,
    pub risk_predicted: Vec<u8>,
    pub risk_actual: Vec<u8>,
}

impl PerceptionScores {
    pub fn collect<'a>(
        records: &[SurveyRecord],
        outcomes: impl IntoIterator<Item = Option<&'a PredictionOutcome>>,
    ) -> Self {
        let mut s = Self::default();
        for (record, outcome) in records.iter().zip(outcomes) {
            let Some(pair) = outcome.and_then(|o| o.perceptions.as_ref()) else {
                continue;
            };
            let actual = |var: &str| -> Option<u8> {
                let v: f64 = record.answer(var)?.parse().ok()?;
                let v = v.round();
                (1.0..=5.0).contains(&v).then_some(v as u8)
            };
            if let Some(a) = actual(&pair.threat.indicator.source_variable) {
                s.threat_predicted.push(pair.threat.calibrated_score);
                s.threat_actual.push(a);
            }
            if let Some(a) = actual(&pair.risk.indicator.source_variable) {
                s.risk_predicted.push(pair.risk.calibrated_score);
                s.risk_actual.push(a);
            }
        }
        s
    }

    /// MSE over both perception families; `None` without any scored pair.
    pub fn mse(&self) -> Option<f64> {
        let p: Vec<f64> = self
            .threat_predicted
            .iter()
            .chain(&self.risk_predicted)
            .map(|&v| f64::from(v))
            .collect();
        let a: Vec<f64> = self
            .threat_actual
            .iter()
            .chain(&self.risk_actual)
            .map(|&v| f64::from(v))
            .collect();
        compute_mse(&p, &a).ok()
    }

    pub fn heatmaps(&self) -> Result<(ScoreConfusion, ScoreConfusion), MetricsError> {
        Ok((
            score_confusion(&self.threat_predicted, &self.threat_actual)?,
            score_confusion(&self.risk_predicted, &self.risk_actual)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metrics::compute_metrics;

    #[test]
    fn table_lists_both_classes() {
        use DecisionValue::{Evacuate as E, Stay as S};
        let report = EvaluationReport {
            dataset: "t".into(),
            provenance: None,
            rows: vec![ReportRow {
                method: "FLARE w/o RL".into(),
                metrics: compute_metrics(&[S, E, E, S], &[S, E, S, S]).unwrap(),
                failed: vec![],
            }],
        };
        let t = report.render_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("FLARE w/o RL  Stay"));
        assert!(lines[2].trim_start().starts_with("Evacuate"));
        assert!(lines[1].contains("0.750"));
    }

    #[test]
    fn failed_records_are_excluded() {
        let rec = |id: &str, d| SurveyRecord {
            record_id: id.into(),
            answers: Default::default(),
            decision: d,
            context_notes: vec![],
        };
        let records = [
            rec("a", DecisionValue::Stay),
            rec("b", DecisionValue::Evacuate),
        ];
        let preds: Vec<Result<DecisionValue, ()>> = vec![Ok(DecisionValue::Stay), Err(())];
        let row = score_predictions("x", &records, &preds).unwrap();
        assert_eq!(row.failed, vec!["b"]);
        assert_eq!(row.metrics.n, 1);
    }
}
