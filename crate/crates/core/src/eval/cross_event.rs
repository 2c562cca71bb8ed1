//! Train on one event, test on another. Training artifacts are built before the
//! test records are touched and carry the training data hash as provenance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Dataset, DecisionValue, SurveySchema, VariableSpec};
use crate::eval::baselines::{direct_llm_baseline, tabular_baseline, BaselineConfig, TabularKind};
use crate::eval::metrics::MetricsError;
use crate::eval::{score_predictions, PerceptionScores, ReportRow};
use crate::llm::{fan_out, Embedder, LlmClient};
use crate::memory::predict_all;
use crate::pipeline::{
    train_flare, Ablation, FlarePipeline, PipelineError, TrainingConfig, TrainingOutput,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schemas cannot be reconciled: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Flare { ablation: Ablation },
    Tabular { kind: TabularKind },
    DirectLlm,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Flare { ablation } => ablation.label(),
            Method::Tabular { kind } => kind.label().to_string(),
            Method::DirectLlm => "LLM Inference".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub training: TrainingConfig,
    pub baseline: BaselineConfig,
}

/// SHA-256 over the schema JSON and the canonical CSV rendering.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&ds.schema).expect("schema serializes"));
    let mut csv = Vec::new();
    ds.write_csv(&mut csv).expect("in-memory csv");
    h.update(&csv);
    hex::encode(h.finalize())
}

fn same_spec(a: &VariableSpec, b: &VariableSpec) -> bool {
    a.name == b.name && a.kind == b.kind
}

/// The training schema restricted to variables both events share with the
/// same kind. The decision column always comes from `train`.
pub fn reconcile_schemas(
    train: &SurveySchema,
    test: &SurveySchema,
) -> Result<SurveySchema, EvalError> {
    let shared: Vec<VariableSpec> = train
        .variables
        .iter()
        .filter(|v| {
            v.name == train.decision_column
                || test.variable(&v.name).is_some_and(|t| same_spec(v, t))
        })
        .cloned()
        .collect();
    if !shared.iter().any(|v| v.name != train.decision_column) {
        return Err(EvalError::SchemaMismatch(
            "no shared survey variables".into(),
        ));
    }
    let has = |n: &String| shared.iter().any(|v| &v.name == n);
    let indicators = train.indicators.clone().filter(|ind| {
        [
            &ind.threat_injury,
            &ind.threat_death,
            &ind.risk_home,
            &ind.risk_neighborhood,
        ]
        .into_iter()
        .all(has)
    });
    let schema = SurveySchema {
        event_name: format!("{} -> {}", train.event_name, test.event_name),
        decision_column: train.decision_column.clone(),
        id_column: train.id_column.clone(),
        context_columns: train
            .context_columns
            .iter()
            .filter(|c| has(c))
            .cloned()
            .collect(),
        indicators,
        classifier_extras: train
            .classifier_extras
            .iter()
            .filter(|c| has(c))
            .cloned()
            .collect(),
        variables: shared,
    };
    schema
        .validate()
        .map_err(|e| EvalError::SchemaMismatch(e.to_string()))?;
    Ok(schema)
}

/// Drops answers outside `schema`; context notes are kept.
pub fn project_dataset(ds: &Dataset, schema: &SurveySchema) -> Dataset {
    let records = ds
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.answers.retain(|k, _| schema.variable(k).is_some());
            r
        })
        .collect();
    Dataset {
        schema: schema.clone(),
        records,
    }
}

pub struct CrossEventRun {
    pub row: ReportRow,
    pub provenance: String,
    /// Training-phase output for FLARE methods.
    pub training: Option<TrainingOutput>,
}

/// Builds every training artifact from `train` alone.
pub fn cross_event_train(
    train: &Dataset,
    ablation: Ablation,
    config: &EvalConfig,
    llm: &LlmClient,
    embedder: &dyn Embedder,
) -> Result<TrainingOutput, EvalError> {
    let mut cfg = config.training.clone();
    cfg.pipeline.ablation = ablation;
    Ok(train_flare(
        train,
        &cfg,
        llm,
        embedder,
        &dataset_hash(train),
    )?)
}

pub fn cross_event_evaluate(
    train: &Dataset,
    test: &Dataset,
    method: Method,
    config: &EvalConfig,
    llm: &LlmClient,
    embedder: &dyn Embedder,
) -> Result<CrossEventRun, EvalError> {
    let schema = reconcile_schemas(&train.schema, &test.schema)?;
    let train = project_dataset(train, &schema);
    let test = project_dataset(test, &schema);
    let provenance = dataset_hash(&train);
    let label = method.label();
    match method {
        Method::Flare { ablation } => {
            if schema.indicators.is_none() {
                return Err(EvalError::SchemaMismatch(
                    "perception indicators are not shared".into(),
                ));
            }
            let out = cross_event_train(&train, ablation, config, llm, embedder)?;
            let pipeline = FlarePipeline {
                artifacts: &out.artifacts,
                llm,
                embedder,
                config: out_config(config, ablation),
            };
            let results = predict_all(&test.records, &pipeline, &out.store);
            let preds: Vec<Result<DecisionValue, String>> = results
                .iter()
                .map(|r| {
                    r.as_ref()
                        .map(|o| o.decision.value)
                        .map_err(|e| e.to_string())
                })
                .collect();
            let mut row = score_predictions(&label, &test.records, &preds)?;
            row.metrics.mse =
                PerceptionScores::collect(&test.records, results.iter().map(|r| r.as_ref().ok()))
                    .mse();
            Ok(CrossEventRun {
                row,
                provenance,
                training: Some(out),
            })
        }
        Method::Tabular { kind } => {
            let preds: Vec<Result<DecisionValue, ()>> =
                tabular_baseline(kind, &train, &test, &config.baseline)?
                    .into_iter()
                    .map(Ok)
                    .collect();
            Ok(CrossEventRun {
                row: score_predictions(&label, &test.records, &preds)?,
                provenance,
                training: None,
            })
        }
        Method::DirectLlm => {
            let preds = fan_out(&test.records, llm.concurrency_bound(), |r| {
                direct_llm_baseline(r, &schema, llm).map(|d| d.value)
            });
            Ok(CrossEventRun {
                row: score_predictions(&label, &test.records, &preds)?,
                provenance,
                training: None,
            })
        }
    }
}

fn out_config(config: &EvalConfig, ablation: Ablation) -> crate::pipeline::PipelineConfig {
    let mut p = config.training.pipeline;
    p.ablation = ablation;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::tiny_schema;

    #[test]
    fn disjoint_schemas_mismatch() {
        let a = tiny_schema();
        let mut b = tiny_schema();
        for v in &mut b.variables {
            if v.name != b.decision_column {
                v.name = format!("other_{}", v.name);
            }
        }
        b.context_columns.clear();
        assert!(matches!(
            reconcile_schemas(&a, &b),
            Err(EvalError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn kinds_must_agree() {
        let a = tiny_schema();
        let mut b = tiny_schema();
        b.variables.retain(|v| v.name != "risk");
        let s = reconcile_schemas(&a, &b).unwrap();
        assert!(s.variable("risk").is_none());
        assert!(s.variable("flames").is_some());
    }
}
