//! Reflective error memory: entries logged on wrong training predictions,
//! self-reflections, similarity retrieval and the train/inference loops.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cot::{Template, TemplateSet};
use crate::dataset::{Dataset, DecisionValue, SurveyRecord};
use crate::llm::{fan_out, LlmClient, LlmError};
use crate::pipeline::{FlarePipeline, PipelineError, PredictionOutcome};
use crate::similarity::top_k;

pub const MEMORY_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("operation needs a store in {expected:?} mode")]
    StoreModeViolation { expected: StoreMode },
    #[error("query has dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("entry {0} already has a reflection")]
    AlreadyReflected(u64),
    #[error("entry {0} has an empty `{1}` field")]
    IncompleteEntry(u64, &'static str),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("memory file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: u64,
    pub record_id: String,
    pub cot_text: String,
    pub context_text: String,
    pub rationale_text: String,
    pub correct_decision: DecisionValue,
    /// Decision the pipeline produced when the entry was logged.
    pub predicted_decision: DecisionValue,
    pub reflection_text: String,
    pub key_embedding: Vec<f64>,
}

impl MemoryEntry {
    pub fn check_complete(&self) -> Result<(), MemoryError> {
        for (name, v) in [
            ("cot_text", &self.cot_text),
            ("context_text", &self.context_text),
            ("rationale_text", &self.rationale_text),
            ("reflection_text", &self.reflection_text),
        ] {
            if v.trim().is_empty() {
                return Err(MemoryError::IncompleteEntry(self.entry_id, name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreHeader {
    schema_version: u32,
    embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    embed_dim: usize,
    mode: StoreMode,
    pub provenance: Option<String>,
}

impl MemoryStore {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            entries: Vec::new(),
            embed_dim,
            mode: StoreMode::Training,
            provenance: None,
        }
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    /// Switches to read-only inference mode.
    pub fn freeze(mut self) -> Self {
        self.mode = StoreMode::Inference;
        self
    }

    pub fn thaw(mut self) -> Self {
        self.mode = StoreMode::Training;
        self
    }

    fn require(&self, expected: StoreMode) -> Result<(), MemoryError> {
        if self.mode == expected {
            Ok(())
        } else {
            Err(MemoryError::StoreModeViolation { expected })
        }
    }

    pub fn next_id(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.entry_id + 1)
    }

    /// Appends an entry with the next id. Only allowed in training mode.
    pub fn append(&mut self, mut entry: MemoryEntry) -> Result<u64, MemoryError> {
        self.require(StoreMode::Training)?;
        if entry.key_embedding.len() != self.embed_dim {
            return Err(MemoryError::DimensionMismatch {
                expected: self.embed_dim,
                got: entry.key_embedding.len(),
            });
        }
        entry.entry_id = self.next_id();
        let id = entry.entry_id;
        self.entries.push(entry);
        Ok(id)
    }

    pub fn entry_mut(&mut self, id: u64) -> Result<&mut MemoryEntry, MemoryError> {
        self.require(StoreMode::Training)?;
        self.entries
            .iter_mut()
            .find(|e| e.entry_id == id)
            .ok_or_else(|| MemoryError::Io(format!("no entry {id}")))
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), MemoryError> {
        let io = |e: std::io::Error| MemoryError::Io(e.to_string());
        let header = StoreHeader {
            schema_version: MEMORY_SCHEMA_VERSION,
            embed_dim: self.embed_dim,
            provenance: self.provenance.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
        for e in &self.entries {
            writeln!(w, "{}", serde_json::to_string(e).unwrap()).map_err(io)?;
        }
        Ok(())
    }

    /// Loads a JSONL store. Loaded stores start in inference mode.
    pub fn load<R: Read>(r: R) -> Result<Self, MemoryError> {
        let mut lines = BufReader::new(r).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| MemoryError::Io("empty memory file".into()))?
            .map_err(|e| MemoryError::Io(e.to_string()))?;
        let header: StoreHeader = serde_json::from_str(&header_line)
            .map_err(|e| MemoryError::Io(format!("header: {e}")))?;
        if header.schema_version != MEMORY_SCHEMA_VERSION {
            return Err(MemoryError::Io(format!(
                "unsupported memory schema version {}",
                header.schema_version
            )));
        }
        let mut entries: Vec<MemoryEntry> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| MemoryError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: MemoryEntry = serde_json::from_str(&line)
                .map_err(|err| MemoryError::Io(format!("line {}: {err}", i + 2)))?;
            if e.key_embedding.len() != header.embed_dim {
                return Err(MemoryError::DimensionMismatch {
                    expected: header.embed_dim,
                    got: e.key_embedding.len(),
                });
            }
            if entries.last().is_some_and(|p| p.entry_id >= e.entry_id) {
                return Err(MemoryError::Io(format!(
                    "line {}: entry ids must increase",
                    i + 2
                )));
            }
            entries.push(e);
        }
        Ok(Self {
            entries,
            embed_dim: header.embed_dim,
            mode: StoreMode::Inference,
            provenance: header.provenance,
        })
    }
}

/// Rewrites a JSONL store canonically: entries sorted by id, duplicate ids
/// collapsed to their last occurrence, fields re-serialized.
pub fn compact<R: Read, W: Write>(input: R, output: W) -> Result<usize, MemoryError> {
    let mut lines = BufReader::new(input).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| MemoryError::Io("empty memory file".into()))?
        .map_err(|e| MemoryError::Io(e.to_string()))?;
    let header: StoreHeader =
        serde_json::from_str(&header_line).map_err(|e| MemoryError::Io(format!("header: {e}")))?;
    let mut by_id = std::collections::BTreeMap::new();
    for line in lines {
        let line = line.map_err(|e| MemoryError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: MemoryEntry =
            serde_json::from_str(&line).map_err(|err| MemoryError::Io(err.to_string()))?;
        by_id.insert(e.entry_id, e);
    }
    let store = MemoryStore {
        entries: by_id.into_values().collect(),
        embed_dim: header.embed_dim,
        mode: StoreMode::Inference,
        provenance: header.provenance,
    };
    store.save(output)?;
    Ok(store.len())
}

/// Up to `k` entries by descending cosine similarity of their keys; ties keep
/// insertion order.
pub fn retrieve_similar<'a>(
    store: &'a MemoryStore,
    query: &[f64],
    k: usize,
) -> Result<Vec<&'a MemoryEntry>, MemoryError> {
    if query.len() != store.embed_dim {
        return Err(MemoryError::DimensionMismatch {
            expected: store.embed_dim,
            got: query.len(),
        });
    }
    Ok(top_k(
        query,
        store.entries.iter().map(|e| e.key_embedding.as_slice()),
        k,
    )
    .into_iter()
    .map(|(i, _)| &store.entries[i])
    .collect())
}

pub fn reflection_prompt(entry: &MemoryEntry, template: &Template) -> (String, String) {
    let word = entry.correct_decision.label_word().to_string();
    let values = std::collections::BTreeMap::from([("label", word.clone()), ("Label", word)]);
    let (system, line) = template
        .render(&values)
        .expect("reflexion template renders");
    let user = format!(
        "{}\n\nYour previous answer:\n{}\n\n{}",
        entry.cot_text, entry.rationale_text, line
    );
    (system, user)
}

/// Asks the model to explain the true outcome. The entry must not yet carry a
/// reflection.
pub fn reflect(entry: &MemoryEntry, llm: &LlmClient) -> Result<String, MemoryError> {
    if !entry.reflection_text.is_empty() {
        return Err(MemoryError::AlreadyReflected(entry.entry_id));
    }
    let (system, user) = reflection_prompt(entry, &TemplateSet::builtin().reflexion);
    let resp = llm.chat(format!("{}/reflect", entry.record_id), &system, &user)?;
    Ok(resp.content)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<PredictionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logged_entry: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One pass over `train`, strictly in order so later records see earlier
/// errors. Wrong predictions are logged and reflected on; a record whose
/// model calls fail is reported and skipped.
pub fn train_epoch(
    train: &Dataset,
    pipeline: &FlarePipeline<'_>,
    store: &mut MemoryStore,
) -> Result<Vec<TrainStep>, PipelineError> {
    if store.mode() != StoreMode::Training {
        return Err(MemoryError::StoreModeViolation {
            expected: StoreMode::Training,
        }
        .into());
    }
    let mut steps = Vec::with_capacity(train.len());
    for record in &train.records {
        steps.push(train_step(record, pipeline, store)?);
    }
    Ok(steps)
}

fn train_step(
    record: &SurveyRecord,
    pipeline: &FlarePipeline<'_>,
    store: &mut MemoryStore,
) -> Result<TrainStep, PipelineError> {
    let run = match pipeline.run_record(record, store) {
        Ok(run) => run,
        Err(e) if e.is_record_failure() => {
            log::warn!("training record {} failed: {e}", record.record_id);
            return Ok(TrainStep {
                record_id: record.record_id.clone(),
                outcome: None,
                logged_entry: None,
                error: Some(e.to_string()),
            });
        }
        Err(e) => return Err(e),
    };
    let mut outcome = run.outcome;
    let correct = outcome.decision.value == record.decision;
    outcome.was_correct = Some(correct);
    let mut logged_entry = None;
    let mut error = None;
    if !correct && !pipeline.config.ablation.no_rl {
        let id = store.append(MemoryEntry {
            entry_id: 0,
            record_id: record.record_id.clone(),
            cot_text: run.prompt_user,
            context_text: run.context_text,
            rationale_text: outcome.decision.rationale_text.clone(),
            correct_decision: record.decision,
            predicted_decision: outcome.decision.value,
            reflection_text: String::new(),
            key_embedding: run.key_embedding,
        })?;
        logged_entry = Some(id);
        let entry = store.entry_mut(id)?.clone();
        match reflect(&entry, pipeline.llm) {
            Ok(text) => store.entry_mut(id)?.reflection_text = text,
            Err(e) => {
                log::warn!("reflection for {} failed: {e}", record.record_id);
                error = Some(e.to_string());
            }
        }
    }
    Ok(TrainStep {
        record_id: record.record_id.clone(),
        outcome: Some(outcome),
        logged_entry,
        error,
    })
}

pub fn predict(
    record: &SurveyRecord,
    pipeline: &FlarePipeline<'_>,
    store: &MemoryStore,
) -> Result<PredictionOutcome, PipelineError> {
    if store.mode() != StoreMode::Inference {
        return Err(MemoryError::StoreModeViolation {
            expected: StoreMode::Inference,
        }
        .into());
    }
    Ok(pipeline.run_record(record, store)?.outcome)
}

/// Inference over many records; the store is read-only so records fan out.
pub fn predict_all(
    records: &[SurveyRecord],
    pipeline: &FlarePipeline<'_>,
    store: &MemoryStore,
) -> Vec<Result<PredictionOutcome, PipelineError>> {
    fan_out(records, pipeline.llm.concurrency_bound(), |r| {
        predict(r, pipeline, store)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: Vec<f64>) -> MemoryEntry {
        MemoryEntry {
            entry_id: 99,
            record_id: "r".into(),
            cot_text: "cot".into(),
            context_text: "ctx".into(),
            rationale_text: "why".into(),
            correct_decision: DecisionValue::Evacuate,
            predicted_decision: DecisionValue::Stay,
            reflection_text: String::new(),
            key_embedding: key,
        }
    }

    #[test]
    fn ids_are_monotone_and_inference_is_read_only() {
        let mut s = MemoryStore::new(2);
        assert_eq!(s.append(entry(vec![1.0, 0.0])).unwrap(), 0);
        assert_eq!(s.append(entry(vec![0.0, 1.0])).unwrap(), 1);
        assert!(matches!(
            s.append(entry(vec![1.0])),
            Err(MemoryError::DimensionMismatch { .. })
        ));
        let mut s = s.freeze();
        assert_eq!(
            s.append(entry(vec![1.0, 0.0])),
            Err(MemoryError::StoreModeViolation {
                expected: StoreMode::Training
            })
        );
        assert!(s.entry_mut(0).is_err());
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn retrieval_truncates_and_ranks() {
        let mut s = MemoryStore::new(2);
        for k in [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]] {
            s.append(entry(k)).unwrap();
        }
        let got = retrieve_similar(&s, &[0.0, 1.0], 10).unwrap();
        assert_eq!(
            got.iter().map(|e| e.entry_id).collect::<Vec<_>>(),
            vec![1, 2, 0]
        );
        assert!(retrieve_similar(&s, &[1.0], 1).is_err());
    }

    #[test]
    fn reflection_prompt_uses_label_word() {
        let mut e = entry(vec![1.0]);
        let t = &TemplateSet::builtin().reflexion;
        let (_, user) = reflection_prompt(&e, t);
        assert!(user.contains("this resident evacuated from the wildfire"));
        assert!(user.contains("why the resident evacuated:"));
        e.correct_decision = DecisionValue::Stay;
        assert!(reflection_prompt(&e, t)
            .1
            .contains("this resident stayed from the wildfire"));
    }

    #[test]
    fn save_load_compact() {
        let mut s = MemoryStore::new(2);
        s.append(entry(vec![1.0, 0.0])).unwrap();
        s.append(entry(vec![0.5, 0.5])).unwrap();
        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        let back = MemoryStore::load(buf.as_slice()).unwrap();
        assert_eq!(back.entries(), s.entries());
        assert_eq!(back.mode(), StoreMode::Inference);

        // a duplicated, out-of-order file compacts to the canonical bytes
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        lines.push(lines[1]);
        let messy = lines.join("\n") + "\n";
        let mut out = Vec::new();
        assert_eq!(compact(messy.as_bytes(), &mut out).unwrap(), 2);
        assert_eq!(out, buf);
    }
}
