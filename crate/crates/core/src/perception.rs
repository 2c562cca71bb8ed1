//! Threat and risk perception inference with retrieval-based score calibration.
//!
//! Perceptions are produced in two stages: threat first, then risk conditioned
//! on the threat summary. Scores are aligned with survey-reported indicator
//! values by averaging the model's score with the two most similar entries of a
//! knowledge base built from the start of the training data.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cot::{render_survey, Template, TemplateSet};
use crate::dataset::{Dataset, SurveyRecord, SurveySchema};
use crate::llm::{fan_out, Embedder, LlmClient, LlmError};
use crate::patterns::ReasoningPattern;
use crate::selection::{IndicatorKind, PerceptionIndicator};
use crate::similarity::top_k;

/// Entries retrieved per calibration query.
pub const CALIBRATION_NEIGHBORS: usize = 2;
pub const SCORE_RETRY_INSTRUCTION: &str =
    "Restate your summary and end with a line \"Score: N\", where N is an integer from 1 to 5.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no 1-5 score marker in response for `{request_id}`")]
    ScoreParseFailure { request_id: String },
    #[error("risk perception requested before a threat assessment for record `{0}`")]
    StageOrderViolation(String),
    #[error("pattern has an empty {0} subset")]
    EmptySubset(&'static str),
    #[error("embedding has dimension {got}, knowledge base expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("raw score {0} outside 1..=5")]
    BadRawScore(u8),
    #[error("knowledge base file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionResult {
    pub record_id: String,
    pub indicator: PerceptionIndicator,
    pub text: String,
    pub raw_score: u8,
    pub calibrated_score: u8,
    pub retrieved_ids: Vec<u64>,
}

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\**score\**\s*[:=]?\s*\**\s*([1-5])\b(\s*/\s*5)?\**").unwrap()
    })
}

/// Splits a response into summary text and its last `Score: N` marker.
pub fn parse_scored_text(response: &str) -> Option<(String, u8)> {
    let m = score_re().captures_iter(response).last()?;
    let whole = m.get(0).unwrap();
    let score: u8 = m[1].parse().ok()?;
    let mut text = String::new();
    text.push_str(&response[..whole.start()]);
    text.push_str(&response[whole.end()..]);
    let text = text
        .trim()
        .trim_end_matches(['.', ',', ';', ':', '-'])
        .trim()
        .to_string();
    Some((text, score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub entry_id: u64,
    pub record_id: String,
    pub indicator: IndicatorKind,
    #[serde(rename = "text")]
    pub perception_text: String,
    #[serde(rename = "score")]
    pub survey_score: u8,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub provider_id: String,
    pub embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    /// Sorted by `entry_id`.
    pub entries: Vec<CalibrationEntry>,
}

impl KnowledgeBase {
    pub fn empty(provider_id: impl Into<String>, embed_dim: usize) -> Self {
        Self {
            provider_id: provider_id.into(),
            embed_dim,
            provenance: None,
            entries: Vec::new(),
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), PerceptionError> {
        serde_json::to_writer_pretty(w, self).map_err(|e| PerceptionError::Io(e.to_string()))
    }

    pub fn load<R: Read>(r: R) -> Result<Self, PerceptionError> {
        let kb: KnowledgeBase =
            serde_json::from_reader(r).map_err(|e| PerceptionError::Io(e.to_string()))?;
        if let Some(e) = kb
            .entries
            .iter()
            .find(|e| e.embedding.len() != kb.embed_dim)
        {
            return Err(PerceptionError::DimensionMismatch {
                expected: kb.embed_dim,
                got: e.embedding.len(),
            });
        }
        Ok(kb)
    }

    /// Ids of the entries with `indicator` nearest to `query`; ties go to the lower id.
    pub fn nearest(
        &self,
        indicator: IndicatorKind,
        query: &[f64],
        k: usize,
    ) -> Result<Vec<&CalibrationEntry>, PerceptionError> {
        if query.len() != self.embed_dim {
            return Err(PerceptionError::DimensionMismatch {
                expected: self.embed_dim,
                got: query.len(),
            });
        }
        let pool: Vec<&CalibrationEntry> = self
            .entries
            .iter()
            .filter(|e| e.indicator == indicator)
            .collect();
        Ok(top_k(query, pool.iter().map(|e| e.embedding.as_slice()), k)
            .into_iter()
            .map(|(i, _)| pool[i])
            .collect())
    }
}

/// Round-half-up mean of integer scores.
pub fn round_half_up_mean(scores: &[u8]) -> u8 {
    let sum: u32 = scores.iter().map(|&s| u32::from(s)).sum();
    let n = scores.len() as u32;
    ((2 * sum + n) / (2 * n)) as u8
}

pub fn calibrate_score(
    text: &str,
    raw_score: u8,
    indicator: IndicatorKind,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
) -> Result<(u8, Vec<u64>), PerceptionError> {
    if !(1..=5).contains(&raw_score) {
        return Err(PerceptionError::BadRawScore(raw_score));
    }
    if !kb.entries.iter().any(|e| e.indicator == indicator) {
        return Ok((raw_score, Vec::new()));
    }
    let query = embedder.embed(text)?;
    let hits = kb.nearest(indicator, &query, CALIBRATION_NEIGHBORS)?;
    let mut scores = vec![raw_score];
    scores.extend(hits.iter().map(|e| e.survey_score));
    let calibrated = round_half_up_mean(&scores).clamp(1, 5);
    Ok((calibrated, hits.iter().map(|e| e.entry_id).collect()))
}

/// Runs the perception prompts for one schema and optional knowledge base.
pub struct Perceiver<'a> {
    pub schema: &'a SurveySchema,
    pub llm: &'a LlmClient,
    pub embedder: &'a dyn Embedder,
    pub kb: Option<&'a KnowledgeBase>,
    pub templates: &'a TemplateSet,
}

impl<'a> Perceiver<'a> {
    fn ask_scored(
        &self,
        request_id: String,
        template: &Template,
        system: &str,
        user: &str,
    ) -> Result<(String, u8), PerceptionError> {
        let first = self.llm.chat(request_id.clone(), system, user)?;
        if let Some(parsed) = parse_scored_text(&first.content) {
            return Ok(parsed);
        }
        log::debug!(
            "{} ({}): no score marker, retrying",
            request_id,
            template.template_id
        );
        let retry_user = format!(
            "{user}\n\nYour previous answer:\n{}\n\n{SCORE_RETRY_INSTRUCTION}",
            first.content
        );
        let second = self
            .llm
            .chat(format!("{request_id}/retry"), system, &retry_user)?;
        parse_scored_text(&second.content).ok_or(PerceptionError::ScoreParseFailure { request_id })
    }

    fn finish(
        &self,
        record: &SurveyRecord,
        indicator: &PerceptionIndicator,
        text: String,
        raw_score: u8,
    ) -> Result<PerceptionResult, PerceptionError> {
        let (calibrated_score, retrieved_ids) = match self.kb {
            Some(kb) => calibrate_score(&text, raw_score, indicator.kind, kb, self.embedder)?,
            None => (raw_score, Vec::new()),
        };
        Ok(PerceptionResult {
            record_id: record.record_id.clone(),
            indicator: indicator.clone(),
            text,
            raw_score,
            calibrated_score,
            retrieved_ids,
        })
    }

    pub fn threat_prompt(
        &self,
        record: &SurveyRecord,
        pattern: &ReasoningPattern,
    ) -> Result<(String, String), PerceptionError> {
        if pattern.threat_subset.selected.is_empty() {
            return Err(PerceptionError::EmptySubset("threat"));
        }
        let survey = render_survey(record, self.schema, &pattern.threat_subset.selected);
        let values = std::collections::BTreeMap::from([("Survey", survey)]);
        self.templates
            .threat
            .render(&values)
            .map_err(|e| PerceptionError::Io(e.to_string()))
    }

    pub fn risk_prompt(
        &self,
        record: &SurveyRecord,
        pattern: &ReasoningPattern,
        threat: &PerceptionResult,
    ) -> Result<(String, String), PerceptionError> {
        if !threat.indicator.kind.is_threat() || threat.record_id != record.record_id {
            return Err(PerceptionError::StageOrderViolation(
                record.record_id.clone(),
            ));
        }
        if pattern.risk_subset.selected.is_empty() {
            return Err(PerceptionError::EmptySubset("risk"));
        }
        let survey = render_survey(record, self.schema, &pattern.risk_subset.selected);
        let values = std::collections::BTreeMap::from([
            ("Perception", threat.text.clone()),
            ("Survey", survey),
        ]);
        self.templates
            .risk
            .render(&values)
            .map_err(|e| PerceptionError::Io(e.to_string()))
    }

    pub fn infer_threat(
        &self,
        record: &SurveyRecord,
        pattern: &ReasoningPattern,
    ) -> Result<PerceptionResult, PerceptionError> {
        let (system, user) = self.threat_prompt(record, pattern)?;
        let id = format!("{}/p{}/threat", record.record_id, pattern.id);
        let (text, score) = self.ask_scored(id, &self.templates.threat, &system, &user)?;
        self.finish(record, &pattern.threat, text, score)
    }

    pub fn infer_risk(
        &self,
        record: &SurveyRecord,
        pattern: &ReasoningPattern,
        threat: &PerceptionResult,
    ) -> Result<PerceptionResult, PerceptionError> {
        let (system, user) = self.risk_prompt(record, pattern, threat)?;
        let id = format!("{}/p{}/risk", record.record_id, pattern.id);
        let (text, score) = self.ask_scored(id, &self.templates.risk, &system, &user)?;
        self.finish(record, &pattern.risk, text, score)
    }

    /// Threat then risk, in that order.
    pub fn infer_both(
        &self,
        record: &SurveyRecord,
        pattern: &ReasoningPattern,
    ) -> Result<(PerceptionResult, PerceptionResult), PerceptionError> {
        let threat = self.infer_threat(record, pattern)?;
        let risk = self.infer_risk(record, pattern, &threat)?;
        Ok((threat, risk))
    }
}

fn survey_score(record: &SurveyRecord, indicator: &PerceptionIndicator) -> Option<u8> {
    let v: f64 = record.answer(&indicator.source_variable)?.parse().ok()?;
    let s = v.round();
    (1.0..=5.0).contains(&s).then_some(s as u8)
}

/// One entry per (record, indicator of its assigned pattern). Records whose
/// indicator answer is missing, or whose perception could not be scored, are
/// skipped with a warning.
pub fn build_knowledge_base(
    partition: &Dataset,
    assignments: &HashMap<String, usize>,
    patterns: &[ReasoningPattern],
    llm: &LlmClient,
    embedder: &dyn Embedder,
) -> Result<KnowledgeBase, PerceptionError> {
    let perceiver = Perceiver {
        schema: &partition.schema,
        llm,
        embedder,
        kb: None,
        templates: TemplateSet::builtin(),
    };
    let results = fan_out(&partition.records, llm.concurrency_bound(), |record| {
        let Some(&pid) = assignments.get(&record.record_id) else {
            log::warn!(
                "record {} has no pattern assignment; skipped",
                record.record_id
            );
            return Ok(Vec::new());
        };
        let pattern = &patterns[pid];
        let (threat, risk) = match perceiver.infer_both(record, pattern) {
            Ok(pair) => pair,
            Err(PerceptionError::ScoreParseFailure { request_id }) => {
                log::warn!("unscored perception for {request_id}; record skipped");
                return Ok(Vec::new());
            }
            Err(e) => return Err(e),
        };
        let mut rows = Vec::new();
        for p in [threat, risk] {
            match survey_score(record, &p.indicator) {
                Some(score) => {
                    let embedding = embedder.embed(&p.text)?;
                    rows.push((
                        record.record_id.clone(),
                        p.indicator.kind,
                        p.text,
                        score,
                        embedding,
                    ));
                }
                None => log::warn!(
                    "record {} has no answer for {}; entry skipped",
                    record.record_id,
                    p.indicator.source_variable
                ),
            }
        }
        Ok(rows)
    });
    let mut entries = Vec::new();
    for rows in results {
        for (record_id, indicator, perception_text, survey_score, embedding) in rows? {
            if embedding.len() != embedder.dim() {
                return Err(LlmError::DimensionDrift {
                    expected: embedder.dim(),
                    got: embedding.len(),
                }
                .into());
            }
            entries.push(CalibrationEntry {
                entry_id: entries.len() as u64,
                record_id,
                indicator,
                perception_text,
                survey_score,
                embedding,
            });
        }
    }
    Ok(KnowledgeBase {
        provider_id: embedder.provider_id(),
        embed_dim: embedder.dim(),
        provenance: None,
        entries,
    })
}
