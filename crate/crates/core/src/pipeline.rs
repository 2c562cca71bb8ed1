//! End-to-end FLARE inference for one record and the training-phase
//! composition shared by the CLI stages and cross-event evaluation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cot::{
    assemble_cot, assemble_with_summary, clarification_prompt, parse_decision, render_examples,
    render_extras, render_survey, CotError, Decision, TemplateSet,
};
use crate::dataset::{
    encode_record, partition_sizes, Dataset, DatasetError, EncodingStats, SurveyRecord,
    SurveySchema,
};
use crate::llm::{Embedder, LlmClient, LlmError};
use crate::memory::{
    retrieve_similar, train_epoch, MemoryEntry, MemoryError, MemoryStore, TrainStep, DEFAULT_K,
};
use crate::patterns::{
    classifier_feature_names, enumerate_patterns, label_records, train_pattern_classifier,
    ClassifierConfig, PatternClassifier, PatternError, PatternTrialReport, ReasoningPattern,
    DEFAULT_TRIALS,
};
use crate::perception::{
    build_knowledge_base, KnowledgeBase, Perceiver, PerceptionError, PerceptionResult,
};
use crate::selection::{
    select_all, FitConfig, SelectionError, ThetaMode, VariableSubset, WeightVector,
};

pub const DEFAULT_KB_FRAC: f64 = 0.7;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Cot(#[from] CotError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("pattern id {0} out of range")]
    UnknownPattern(usize),
}

impl PipelineError {
    /// Failures confined to one record: provider errors and unparseable
    /// answers. Anything else is a configuration or artifact problem.
    pub fn is_record_failure(&self) -> bool {
        match self {
            PipelineError::Llm(_) => true,
            PipelineError::Cot(e) => {
                matches!(e, CotError::AmbiguousDecision | CotError::EmptyResponse)
            }
            PipelineError::Perception(e) => {
                matches!(
                    e,
                    PerceptionError::Llm(_) | PerceptionError::ScoreParseFailure { .. }
                )
            }
            PipelineError::Memory(MemoryError::Llm(_)) => true,
            PipelineError::Pattern(PatternError::Pipeline(inner)) => inner.is_record_failure(),
            _ => false,
        }
    }
}

/// Asks for a decision; an ambiguous answer gets one clarification follow-up.
pub fn ask_decision(
    llm: &LlmClient,
    request_id: &str,
    system: &str,
    user: &str,
) -> Result<Decision, PipelineError> {
    let first = llm.chat(request_id, system, user)?;
    match parse_decision(&first.content) {
        Ok(d) => Ok(d),
        Err(CotError::AmbiguousDecision | CotError::EmptyResponse) => {
            log::debug!("{request_id}: ambiguous decision, asking for clarification");
            let follow_up = clarification_prompt(user, &first.content);
            let second = llm.chat(format!("{request_id}/clarify"), system, &follow_up)?;
            let mut d = parse_decision(&second.content)?;
            if !first.content.trim().is_empty() {
                d.rationale_text = format!("{}\n\n{}", first.content, second.content);
            }
            Ok(d)
        }
        Err(e) => Err(e.into()),
    }
}

/// Ablation switches; `FULL` turns nothing off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_cot: bool,
    pub no_rl: bool,
    pub no_perception: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_cot: false,
        no_rl: false,
        no_perception: false,
    };
    pub const NO_COT_NO_RL: Ablation = Ablation {
        no_cot: true,
        no_rl: true,
        no_perception: false,
    };
    pub const NO_RL: Ablation = Ablation {
        no_cot: false,
        no_rl: true,
        no_perception: false,
    };
    pub const NO_PERCEPTION: Ablation = Ablation {
        no_cot: false,
        no_rl: false,
        no_perception: true,
    };
    pub const NO_COT: Ablation = Ablation {
        no_cot: true,
        no_rl: false,
        no_perception: false,
    };

    /// The four reduced configurations in reporting order.
    pub const TABLE_ROWS: [Ablation; 4] = [
        Self::NO_COT_NO_RL,
        Self::NO_RL,
        Self::NO_PERCEPTION,
        Self::NO_COT,
    ];

    /// Report label, e.g. "FLARE w/o CoT and RL". Without a chain of thought
    /// there is nowhere to put perceptions, so `no_perception` is implied.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_cot {
            parts.push("CoT");
        }
        if self.no_rl {
            parts.push("RL");
        }
        if self.no_perception && !self.no_cot {
            parts.push("perception");
        }
        if parts.is_empty() {
            "FLARE".to_string()
        } else {
            format!("FLARE w/o {}", parts.join(" and "))
        }
    }

    fn uses_perceptions(&self) -> bool {
        !self.no_cot && !self.no_perception
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            ablation: Ablation::FULL,
        }
    }
}

/// Everything the training phase fixes before the memory loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedArtifacts {
    pub schema: SurveySchema,
    pub stats: EncodingStats,
    pub subsets: Vec<VariableSubset>,
    pub patterns: Vec<ReasoningPattern>,
    pub classifier: PatternClassifier,
    pub kb: KnowledgeBase,
    pub provenance: String,
}

impl TrainedArtifacts {
    /// Variables behind the memory key: the union of all four subsets.
    pub fn memory_key_variables(&self) -> Vec<String> {
        memory_key_variables(&self.schema, &self.subsets)
    }
}

pub fn memory_key_variables(schema: &SurveySchema, subsets: &[VariableSubset]) -> Vec<String> {
    schema
        .variables
        .iter()
        .map(|v| v.name.clone())
        .filter(|n| subsets.iter().any(|s| s.selected.contains(n)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionPair {
    pub threat: PerceptionResult,
    pub risk: PerceptionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub record_id: String,
    pub decision: Decision,
    pub pattern_id: usize,
    /// Absent when the configuration does not infer perceptions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceptions: Option<PerceptionPair>,
    pub retrieved_entry_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub was_correct: Option<bool>,
}

/// A finished record plus what training needs to log it.
#[derive(Debug, Clone)]
pub struct RecordRun {
    pub outcome: PredictionOutcome,
    pub prompt_system: String,
    pub prompt_user: String,
    pub context_text: String,
    pub key_embedding: Vec<f64>,
}

pub struct FlarePipeline<'a> {
    pub artifacts: &'a TrainedArtifacts,
    pub llm: &'a LlmClient,
    pub embedder: &'a dyn Embedder,
    pub config: PipelineConfig,
}

impl FlarePipeline<'_> {
    pub fn classify(&self, record: &SurveyRecord) -> Result<&ReasoningPattern, PipelineError> {
        let a = self.artifacts;
        let fv = encode_record(record, &a.schema, &a.stats)?;
        let x = a.classifier.project(&fv.values, &a.stats.names)?;
        let id = a.classifier.classify(&x)?;
        a.patterns
            .iter()
            .find(|p| p.id == id)
            .ok_or(PipelineError::UnknownPattern(id))
    }

    /// Classify, perceive, retrieve, assemble and decide. Never writes to the
    /// store; training does that from the returned run.
    pub fn run_record(
        &self,
        record: &SurveyRecord,
        store: &MemoryStore,
    ) -> Result<RecordRun, PipelineError> {
        let a = self.artifacts;
        let ablation = self.config.ablation;
        let templates = TemplateSet::builtin();
        let pattern = self.classify(record)?;

        let (key_embedding, examples): (Vec<f64>, Vec<MemoryEntry>) = if ablation.no_rl {
            (Vec::new(), Vec::new())
        } else {
            let key_text = render_survey(record, &a.schema, &a.memory_key_variables());
            let key = self.embedder.embed(&key_text)?;
            let hits = retrieve_similar(store, &key, self.config.k)?
                .into_iter()
                .cloned()
                .collect();
            (key, hits)
        };
        let retrieved_entry_ids = examples.iter().map(|e| e.entry_id).collect();
        let extras = render_extras(&record.context_notes);
        let pattern_survey = render_survey(record, &a.schema, &pattern.variables());

        let (system, user, context_text, perceptions) = if ablation.no_cot {
            let values = BTreeMap::from([
                ("Examples", render_examples(&examples)),
                ("Survey", pattern_survey.clone()),
                ("Extras", extras.clone()),
            ]);
            let (s, u) = templates.direct_memory.render(&values)?;
            let ctx = format!("Survey responses: {pattern_survey}\nExternal information: {extras}");
            (s, u, ctx, None)
        } else if !ablation.uses_perceptions() {
            let summary = format!("Survey responses: {pattern_survey}");
            let cot = assemble_with_summary(
                &templates.decision,
                &record.record_id,
                summary.clone(),
                &record.context_notes,
                &examples,
            )?;
            let ctx = format!("{summary}\nExternal information: {extras}");
            (cot.rendered_system, cot.rendered_user, ctx, None)
        } else {
            let perceiver = Perceiver {
                schema: &a.schema,
                llm: self.llm,
                embedder: self.embedder,
                kb: Some(&a.kb),
                templates,
            };
            let (threat, risk) = perceiver.infer_both(record, pattern)?;
            let cot = assemble_cot(
                &templates.decision,
                &record.record_id,
                &risk,
                &record.context_notes,
                &examples,
            )?;
            let ctx = format!(
                "Threat assessment: {} (score: {}/5)\nRisk perception: {}\nExternal information: {}",
                threat.text, threat.calibrated_score, cot.components.risk_summary, extras
            );
            (
                cot.rendered_system,
                cot.rendered_user,
                ctx,
                Some(PerceptionPair { threat, risk }),
            )
        };

        let id = format!("{}/decision", record.record_id);
        let decision = ask_decision(self.llm, &id, &system, &user)?;
        Ok(RecordRun {
            outcome: PredictionOutcome {
                record_id: record.record_id.clone(),
                decision,
                pattern_id: pattern.id,
                perceptions,
                retrieved_entry_ids,
                was_correct: None,
            },
            prompt_system: system,
            prompt_user: user,
            context_text,
            key_embedding,
        })
    }
}

/// Settings for every training-phase step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub kb_frac: f64,
    pub theta: ThetaMode,
    pub fit: FitConfig,
    pub trials: usize,
    pub classifier: ClassifierConfig,
    pub pipeline: PipelineConfig,
    pub epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            kb_frac: DEFAULT_KB_FRAC,
            theta: ThetaMode::Elbow,
            fit: FitConfig::default(),
            trials: DEFAULT_TRIALS,
            classifier: ClassifierConfig::default(),
            pipeline: PipelineConfig::default(),
            epochs: 1,
        }
    }
}

/// The first `kb_frac` of `train`, in the order given.
pub fn kb_partition(train: &Dataset, kb_frac: f64) -> Result<Dataset, DatasetError> {
    let sizes = partition_sizes(train.len(), &[kb_frac, 1.0 - kb_frac])?;
    Ok(train.subset(train.records[..sizes[0]].to_vec()))
}

/// Reorders `part` to follow the stored order of `full`.
pub fn in_stored_order(full: &Dataset, part: &Dataset) -> Dataset {
    let pos: HashMap<&str, usize> = full
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.as_str(), i))
        .collect();
    let mut records = part.records.clone();
    records.sort_by_key(|r| pos.get(r.record_id.as_str()).copied().unwrap_or(usize::MAX));
    part.subset(records)
}

pub fn fit_classifier(
    train: &Dataset,
    stats: &EncodingStats,
    subsets: &[VariableSubset],
    reports: &[PatternTrialReport],
    config: &ClassifierConfig,
) -> Result<PatternClassifier, PipelineError> {
    let names = classifier_feature_names(&train.schema, subsets);
    let labels: HashMap<&str, usize> = reports
        .iter()
        .map(|r| (r.record_id.as_str(), r.label))
        .collect();
    let mut features = Vec::new();
    let mut ys = Vec::new();
    for record in &train.records {
        let Some(&label) = labels.get(record.record_id.as_str()) else {
            continue;
        };
        let fv = encode_record(record, &train.schema, stats)?;
        let x = names
            .iter()
            .map(|n| {
                stats
                    .names
                    .iter()
                    .position(|a| a == n)
                    .map(|i| fv.values[i])
            })
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| PatternError::UnknownFeature(names.join(",")))?;
        features.push(x);
        ys.push(label);
    }
    Ok(train_pattern_classifier(&features, &ys, names, config)?)
}

pub struct TrainingOutput {
    pub artifacts: TrainedArtifacts,
    pub weights: Vec<WeightVector>,
    pub reports: Vec<PatternTrialReport>,
    pub store: MemoryStore,
    pub steps: Vec<TrainStep>,
}

/// Runs the whole training phase on `train` alone: selection, pattern labels,
/// classifier, knowledge base and memory. `train` must be in stored order so
/// the knowledge-base partition is its prefix.
pub fn train_flare(
    train: &Dataset,
    config: &TrainingConfig,
    llm: &LlmClient,
    embedder: &dyn Embedder,
    provenance: &str,
) -> Result<TrainingOutput, PipelineError> {
    let stats = EncodingStats::fit(train)?;
    let (weights, subsets) = select_all(train, &stats, &config.fit, config.theta)?;
    let patterns = enumerate_patterns(&subsets)?;
    let reports = label_records(
        &train.records,
        &train.schema,
        &patterns,
        llm,
        embedder,
        config.trials,
    )?;
    let classifier = fit_classifier(train, &stats, &subsets, &reports, &config.classifier)?;
    let kb_part = kb_partition(train, config.kb_frac)?;
    let assignments: HashMap<String, usize> = reports
        .iter()
        .map(|r| (r.record_id.clone(), r.label))
        .collect();
    let mut kb = build_knowledge_base(&kb_part, &assignments, &patterns, llm, embedder)?;
    kb.provenance = Some(provenance.to_string());
    let artifacts = TrainedArtifacts {
        schema: train.schema.clone(),
        stats,
        subsets,
        patterns,
        classifier,
        kb,
        provenance: provenance.to_string(),
    };
    let (store, steps) = train_memory(
        train,
        &artifacts,
        config.pipeline,
        config.epochs,
        llm,
        embedder,
    )?;
    Ok(TrainingOutput {
        artifacts,
        weights,
        reports,
        store,
        steps,
    })
}

/// Memory training for `epochs` passes; returns the frozen store.
pub fn train_memory(
    train: &Dataset,
    artifacts: &TrainedArtifacts,
    config: PipelineConfig,
    epochs: usize,
    llm: &LlmClient,
    embedder: &dyn Embedder,
) -> Result<(MemoryStore, Vec<TrainStep>), PipelineError> {
    let pipeline = FlarePipeline {
        artifacts,
        llm,
        embedder,
        config,
    };
    let mut store = MemoryStore::new(embedder.dim());
    store.provenance = Some(artifacts.provenance.clone());
    let mut steps = Vec::new();
    for _ in 0..epochs.max(1) {
        steps.extend(train_epoch(train, &pipeline, &mut store)?);
    }
    Ok((store.freeze(), steps))
}
