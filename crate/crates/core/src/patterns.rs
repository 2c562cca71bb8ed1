//! The four threat x risk reasoning patterns, trial-based labeling and the
//! pattern classifier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cot::{assemble_cot, TemplateSet};
use crate::dataset::{SurveyRecord, SurveySchema};
use crate::llm::{fan_out, Embedder, LlmClient};
use crate::perception::Perceiver;
use crate::pipeline::{ask_decision, PipelineError};
use crate::selection::{IndicatorKind, PerceptionIndicator, VariableSubset};
use crate::tree::{
    DecisionTree, ForestConfig, RandomForest, TreeConfig, TreeError, DEFAULT_MAX_DEPTH,
};

pub const N_PATTERNS: usize = 4;
pub const DEFAULT_TRIALS: usize = 5;
pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("no variable subset for indicator {0}")]
    MissingSubset(IndicatorKind),
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("feature `{0}` is not in the encoded schema")]
    UnknownFeature(String),
    #[error(transparent)]
    Pipeline(#[from] Box<PipelineError>),
}

impl From<PipelineError> for PatternError {
    fn from(e: PipelineError) -> Self {
        PatternError::Pipeline(Box::new(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPattern {
    pub id: usize,
    pub threat: PerceptionIndicator,
    pub risk: PerceptionIndicator,
    pub threat_subset: VariableSubset,
    pub risk_subset: VariableSubset,
}

impl ReasoningPattern {
    /// Threat then risk variables, without duplicates.
    pub fn variables(&self) -> Vec<String> {
        let mut out = self.threat_subset.selected.clone();
        for v in &self.risk_subset.selected {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        out
    }
}

/// Ids are fixed: (injury, home)=0, (injury, neighborhood)=1, (death, home)=2,
/// (death, neighborhood)=3.
pub fn enumerate_patterns(
    subsets: &[VariableSubset],
) -> Result<Vec<ReasoningPattern>, PatternError> {
    let find = |kind: IndicatorKind| {
        subsets
            .iter()
            .find(|s| s.indicator.kind == kind)
            .ok_or(PatternError::MissingSubset(kind))
    };
    let mut out = Vec::with_capacity(N_PATTERNS);
    for threat in [IndicatorKind::ThreatInjury, IndicatorKind::ThreatDeath] {
        for risk in [IndicatorKind::RiskHome, IndicatorKind::RiskNeighborhood] {
            let ts = find(threat)?;
            let rs = find(risk)?;
            out.push(ReasoningPattern {
                id: out.len(),
                threat: ts.indicator.clone(),
                risk: rs.indicator.clone(),
                threat_subset: ts.clone(),
                risk_subset: rs.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTrialReport {
    pub record_id: String,
    pub rates: [f64; N_PATTERNS],
    pub trials: usize,
    pub label: usize,
    #[serde(default)]
    pub low_confidence: bool,
}

/// Argmax over the four rates, ties to the lowest id. The flag marks an
/// all-zero rate vector.
pub fn label_most_probable(rates: &[f64; N_PATTERNS]) -> (usize, bool) {
    let mut best = 0;
    for i in 1..N_PATTERNS {
        if rates[i] > rates[best] {
            best = i;
        }
    }
    (best, rates.iter().all(|&r| r == 0.0))
}

/// Success rate of one pattern: perceptions are generated once, inserted into
/// a temporary chain without memory examples, and the decision is sampled
/// `trials` times. A trial whose answer stays ambiguous counts as incorrect.
pub fn estimate_pattern_success(
    record: &SurveyRecord,
    schema: &SurveySchema,
    pattern: &ReasoningPattern,
    llm: &LlmClient,
    embedder: &dyn Embedder,
    trials: usize,
) -> Result<f64, PatternError> {
    if trials == 0 {
        return Err(PatternError::ZeroTrials);
    }
    let templates = TemplateSet::builtin();
    let perceiver = Perceiver {
        schema,
        llm,
        embedder,
        kb: None,
        templates,
    };
    let (_, risk) = perceiver
        .infer_both(record, pattern)
        .map_err(PipelineError::from)?;
    let cot = assemble_cot(
        &templates.decision,
        &record.record_id,
        &risk,
        &record.context_notes,
        &[],
    )
    .map_err(PipelineError::from)?;
    let mut correct = 0usize;
    for t in 0..trials {
        let id = format!("{}/p{}/trial{}", record.record_id, pattern.id, t);
        match ask_decision(llm, &id, &cot.rendered_system, &cot.rendered_user) {
            Ok(d) if d.value == record.decision => correct += 1,
            Ok(_) => {}
            Err(PipelineError::Cot(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(correct as f64 / trials as f64)
}

/// Trial reports for every record, fanned out over (record, pattern) pairs.
pub fn label_records(
    records: &[SurveyRecord],
    schema: &SurveySchema,
    patterns: &[ReasoningPattern],
    llm: &LlmClient,
    embedder: &dyn Embedder,
    trials: usize,
) -> Result<Vec<PatternTrialReport>, PatternError> {
    if trials == 0 {
        return Err(PatternError::ZeroTrials);
    }
    let jobs: Vec<(usize, usize)> = (0..records.len())
        .flat_map(|r| (0..patterns.len()).map(move |p| (r, p)))
        .collect();
    let rates = fan_out(&jobs, llm.concurrency_bound(), |&(r, p)| {
        estimate_pattern_success(&records[r], schema, &patterns[p], llm, embedder, trials)
    });
    let mut reports = Vec::with_capacity(records.len());
    let mut it = rates.into_iter();
    for record in records {
        let mut r = [0.0; N_PATTERNS];
        for slot in r.iter_mut().take(patterns.len()) {
            *slot = it.next().expect("one rate per job")?;
        }
        let (label, low_confidence) = label_most_probable(&r);
        reports.push(PatternTrialReport {
            record_id: record.record_id.clone(),
            rates: r,
            trials,
            label,
            low_confidence,
        });
    }
    Ok(reports)
}

/// Classifier inputs: every selected variable of the four subsets plus the
/// schema's classifier extras, in schema feature order.
pub fn classifier_feature_names(schema: &SurveySchema, subsets: &[VariableSubset]) -> Vec<String> {
    schema
        .feature_names()
        .into_iter()
        .filter(|n| {
            schema.classifier_extras.contains(n) || subsets.iter().any(|s| s.selected.contains(n))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Tree,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    Tree(DecisionTree),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternClassifier {
    pub version: u32,
    pub max_depth: usize,
    pub feature_names: Vec<String>,
    pub model: ClassifierModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub max_depth: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Tree,
            max_depth: DEFAULT_MAX_DEPTH,
            n_trees: 25,
            seed: 0,
        }
    }
}

pub fn train_pattern_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    feature_names: Vec<String>,
    config: &ClassifierConfig,
) -> Result<PatternClassifier, PatternError> {
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        ..TreeConfig::default()
    };
    let model = match config.kind {
        ClassifierKind::Tree => {
            ClassifierModel::Tree(DecisionTree::fit(features, labels, tree_cfg)?)
        }
        ClassifierKind::Forest => ClassifierModel::Forest(RandomForest::fit(
            features,
            labels,
            ForestConfig {
                n_trees: config.n_trees,
                seed: config.seed,
                tree: tree_cfg,
            },
        )?),
    };
    Ok(PatternClassifier {
        version: CLASSIFIER_FORMAT_VERSION,
        max_depth: config.max_depth,
        feature_names,
        model,
    })
}

impl PatternClassifier {
    /// Picks this classifier's inputs out of a full encoded vector.
    pub fn project(&self, full: &[f64], all_names: &[String]) -> Result<Vec<f64>, PatternError> {
        self.feature_names
            .iter()
            .map(|n| {
                all_names
                    .iter()
                    .position(|a| a == n)
                    .map(|i| full[i])
                    .ok_or_else(|| PatternError::UnknownFeature(n.clone()))
            })
            .collect()
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize, PatternError> {
        Ok(match &self.model {
            ClassifierModel::Tree(t) => t.predict(x)?,
            ClassifierModel::Forest(f) => f.predict(x)?,
        })
    }

    pub fn depth(&self) -> usize {
        match &self.model {
            ClassifierModel::Tree(t) => t.depth(),
            ClassifierModel::Forest(f) => {
                f.trees.iter().map(DecisionTree::depth).max().unwrap_or(0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subset(kind: IndicatorKind) -> VariableSubset {
        VariableSubset {
            indicator: PerceptionIndicator {
                kind,
                source_variable: kind.as_str().into(),
            },
            theta: 0.8,
            coverage: 1.0,
            selected: vec![format!("{kind}_var")],
        }
    }

    #[test]
    fn four_patterns_in_fixed_order() {
        let subsets: Vec<_> = IndicatorKind::ALL
            .iter()
            .rev()
            .map(|&k| subset(k))
            .collect();
        let p = enumerate_patterns(&subsets).unwrap();
        let pairs: Vec<_> = p
            .iter()
            .map(|p| (p.id, p.threat.kind, p.risk.kind))
            .collect();
        use IndicatorKind::*;
        assert_eq!(
            pairs,
            vec![
                (0, ThreatInjury, RiskHome),
                (1, ThreatInjury, RiskNeighborhood),
                (2, ThreatDeath, RiskHome),
                (3, ThreatDeath, RiskNeighborhood)
            ]
        );
    }

    #[test]
    fn missing_subset() {
        let subsets: Vec<_> = IndicatorKind::ALL[..3].iter().map(|&k| subset(k)).collect();
        assert!(matches!(
            enumerate_patterns(&subsets),
            Err(PatternError::MissingSubset(IndicatorKind::RiskNeighborhood))
        ));
    }

    #[test]
    fn argmax_labeling() {
        assert_eq!(label_most_probable(&[0.2, 0.9, 0.4, 0.4]), (1, false));
        assert_eq!(label_most_probable(&[0.5; 4]), (0, false));
        assert_eq!(label_most_probable(&[0.0; 4]), (0, true));
    }

    #[test]
    fn single_label_classifier() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let c =
            train_pattern_classifier(&x, &[2; 4], vec!["a".into()], &ClassifierConfig::default())
                .unwrap();
        assert_eq!(c.classify(&[-10.0]).unwrap(), 2);
        assert!(matches!(
            c.classify(&[1.0, 2.0]),
            Err(PatternError::Tree(TreeError::DimensionMismatch { .. }))
        ));
        assert!(matches!(
            train_pattern_classifier(&x, &[1, 2], vec![], &ClassifierConfig::default()),
            Err(PatternError::Tree(TreeError::LengthMismatch { .. }))
        ));
    }
}
