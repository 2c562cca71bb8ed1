//! Tabular baselines over the encoded survey and the direct-prompt LLM baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cot::{render_survey, Decision, TemplateSet};
use crate::dataset::{
    encode_dataset, Dataset, DecisionValue, EncodingStats, SurveyRecord, SurveySchema,
};
use crate::eval::logistic::{fit_logistic, LogisticConfig};
use crate::llm::LlmClient;
use crate::pipeline::{ask_decision, PipelineError};
use crate::tree::{DecisionTree, ForestConfig, RandomForest, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabularKind {
    Logistic,
    Tree,
    Forest,
}

impl TabularKind {
    pub fn label(self) -> &'static str {
        match self {
            TabularKind::Logistic => "Logistic Regression",
            TabularKind::Tree => "Decision Tree",
            TabularKind::Forest => "Random Forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub logistic: LogisticConfig,
    pub max_depth: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            logistic: LogisticConfig::default(),
            max_depth: crate::tree::DEFAULT_MAX_DEPTH,
            n_trees: 25,
            seed: 0,
        }
    }
}

fn label_id(v: DecisionValue) -> usize {
    match v {
        DecisionValue::Stay => 0,
        DecisionValue::Evacuate => 1,
    }
}

fn from_id(i: usize) -> DecisionValue {
    if i == 1 {
        DecisionValue::Evacuate
    } else {
        DecisionValue::Stay
    }
}

/// Fits on `train` (encoding statistics included) and predicts `test`.
/// Both datasets must share the schema.
pub fn tabular_baseline(
    kind: TabularKind,
    train: &Dataset,
    test: &Dataset,
    config: &BaselineConfig,
) -> Result<Vec<DecisionValue>, PipelineError> {
    let stats = EncodingStats::fit(train)?;
    let x: Vec<Vec<f64>> = encode_dataset(train, &stats)?
        .into_iter()
        .map(|f| f.values)
        .collect();
    let xt: Vec<Vec<f64>> = encode_dataset(test, &stats)?
        .into_iter()
        .map(|f| f.values)
        .collect();
    let y: Vec<usize> = train.records.iter().map(|r| label_id(r.decision)).collect();
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        ..TreeConfig::default()
    };
    let tree_err = |e| PipelineError::Pattern(crate::patterns::PatternError::Tree(e));
    Ok(match kind {
        TabularKind::Logistic => {
            let yb: Vec<bool> = y.iter().map(|&l| l == 1).collect();
            let m = fit_logistic(&x, &yb, &config.logistic);
            xt.iter()
                .map(|r| from_id(usize::from(m.predict(r))))
                .collect()
        }
        TabularKind::Tree => {
            let t = DecisionTree::fit(&x, &y, tree_cfg).map_err(tree_err)?;
            xt.iter()
                .map(|r| t.predict(r).map(from_id))
                .collect::<Result<_, _>>()
                .map_err(tree_err)?
        }
        TabularKind::Forest => {
            let f = RandomForest::fit(
                &x,
                &y,
                ForestConfig {
                    n_trees: config.n_trees,
                    seed: config.seed,
                    tree: tree_cfg,
                },
            )
            .map_err(tree_err)?;
            xt.iter()
                .map(|r| f.predict(r).map(from_id))
                .collect::<Result<_, _>>()
                .map_err(tree_err)?
        }
    })
}

/// Every survey answer except the decision itself.
pub fn direct_prompt(record: &SurveyRecord, schema: &SurveySchema) -> (String, String) {
    let vars: Vec<String> = schema
        .variables
        .iter()
        .filter(|v| v.name != schema.decision_column)
        .map(|v| v.name.clone())
        .collect();
    let values = BTreeMap::from([("Survey", render_survey(record, schema, &vars))]);
    TemplateSet::builtin()
        .direct
        .render(&values)
        .expect("direct template renders")
}

/// One prompt, no chain of thought, perceptions or memory.
pub fn direct_llm_baseline(
    record: &SurveyRecord,
    schema: &SurveySchema,
    llm: &LlmClient,
) -> Result<Decision, PipelineError> {
    let (system, user) = direct_prompt(record, schema);
    ask_decision(llm, &format!("{}/direct", record.record_id), &system, &user)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::tiny_schema;

    #[test]
    fn direct_prompt_has_no_chain_blocks() {
        let schema = tiny_schema();
        let record = SurveyRecord {
            record_id: "r1".into(),
            answers: BTreeMap::from([
                ("flames".to_string(), "No".to_string()),
                ("evacuated".to_string(), "Yes".to_string()),
            ]),
            decision: DecisionValue::Stay,
            context_notes: vec![],
        };
        let (_, user) = direct_prompt(&record, &schema);
        assert!(user.contains("definitive YES or NO"));
        assert!(!user.contains("Previous Examples"));
        assert!(!user.contains("Risk Perception Summary"));
        assert!(user.contains("Did you see flames?: No"));
        assert!(!user.contains("evacuated: Yes"));
    }
}
