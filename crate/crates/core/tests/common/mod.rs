//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use flare_core::dataset::{
    load_dataset, split_dataset, Dataset, DecisionValue, EncodingStats, SplitMode, SurveySchema,
};
use flare_core::llm::{Embedder, HashEmbedder, LlmClient, ScriptEntry, ScriptedStub};
use flare_core::patterns::{enumerate_patterns, PatternTrialReport, N_PATTERNS};
use flare_core::perception::KnowledgeBase;
use flare_core::pipeline::{fit_classifier, in_stored_order, TrainedArtifacts};
use flare_core::selection::{select_all, FitConfig};
use flare_core::ThetaMode;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn synthetic_dir() -> PathBuf {
    manifest_dir().join("../../data/synthetic")
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

fn load(dir: PathBuf) -> Dataset {
    let schema = SurveySchema::from_path(dir.join("schema.json")).expect("fixture schema");
    load_dataset(dir.join("survey.csv"), &schema).expect("fixture survey")
}

/// Twelve hand-written respondents, ids `rec-01` .. `rec-12`.
pub fn mini() -> Dataset {
    load(manifest_dir().join("tests/fixtures/mini"))
}

/// The bundled 80-respondent synthetic event.
pub fn synthetic() -> Dataset {
    load(synthetic_dir())
}

pub fn synthetic_event_b() -> Dataset {
    load(synthetic_dir().join("event_b"))
}

/// Train/test partitions as the CLI makes them from the bundled config.
pub fn synthetic_split() -> (Dataset, Dataset) {
    let full = synthetic();
    let parts = split_dataset(&full, &[0.8, 0.2], 7, SplitMode::Shuffled).unwrap();
    (
        in_stored_order(&full, &parts[0]),
        in_stored_order(&full, &parts[1]),
    )
}

pub fn embedder() -> HashEmbedder {
    HashEmbedder::default()
}

pub fn client(entries: Vec<ScriptEntry>) -> (LlmClient, Arc<ScriptedStub>) {
    let stub = Arc::new(ScriptedStub::new(entries));
    (LlmClient::from_stub(stub.clone()), stub)
}

pub fn bundled_client() -> (LlmClient, Arc<ScriptedStub>) {
    let stub =
        Arc::new(ScriptedStub::from_path(synthetic_dir().join("stub_transcript.json")).unwrap());
    (LlmClient::from_stub(stub.clone()), stub)
}

/// Threat and risk prompts always answer with a fixed score.
pub fn perception_entries() -> Vec<ScriptEntry> {
    vec![
        ScriptEntry::always(
            "rating the resident's threat assessment",
            "The resident felt some danger.\nScore: 3",
        ),
        ScriptEntry::always(
            "rating the resident's risk perception",
            "The resident expected moderate damage.\nScore: 3",
        ),
        ScriptEntry::always(
            "Please reconsider",
            "Reflection: the concrete cues mattered more.",
        ),
    ]
}

pub fn answer(d: DecisionValue) -> &'static str {
    match d {
        DecisionValue::Evacuate => "Step 1: weighing the cues.\nConclusion: YES",
        DecisionValue::Stay => "Step 1: weighing the cues.\nConclusion: NO",
    }
}

pub fn flip(d: DecisionValue) -> DecisionValue {
    match d {
        DecisionValue::Evacuate => DecisionValue::Stay,
        DecisionValue::Stay => DecisionValue::Evacuate,
    }
}

/// Artifacts built without any model calls: the elbow subsets, a classifier
/// that sends everyone to pattern 0, and an empty knowledge base.
pub fn manual_artifacts(ds: &Dataset, embedder: &dyn Embedder) -> TrainedArtifacts {
    let stats = EncodingStats::fit(ds).unwrap();
    let (_, subsets) = select_all(ds, &stats, &FitConfig::default(), ThetaMode::Elbow).unwrap();
    let patterns = enumerate_patterns(&subsets).unwrap();
    let reports: Vec<PatternTrialReport> = ds
        .records
        .iter()
        .map(|r| PatternTrialReport {
            record_id: r.record_id.clone(),
            rates: [0.0; N_PATTERNS],
            trials: 1,
            label: 0,
            low_confidence: true,
        })
        .collect();
    let classifier = fit_classifier(ds, &stats, &subsets, &reports, &Default::default()).unwrap();
    TrainedArtifacts {
        schema: ds.schema.clone(),
        stats,
        subsets,
        patterns,
        classifier,
        kb: KnowledgeBase::empty(embedder.provider_id(), embedder.dim()),
        provenance: "fixture".into(),
    }
}

/// Decision replies keyed on request id: correct for every record except
/// those in `wrong`.
pub fn decision_entries(ds: &Dataset, wrong: &[&str]) -> Vec<ScriptEntry> {
    let truth: HashMap<&str, DecisionValue> = ds
        .records
        .iter()
        .map(|r| (r.record_id.as_str(), r.decision))
        .collect();
    let mut ids: Vec<&&str> = truth.keys().collect();
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let d = if wrong.contains(id) {
                flip(truth[*id])
            } else {
                truth[*id]
            };
            ScriptEntry::always("", answer(d)).for_request(&format!("{id}/decision"))
        })
        .collect()
}

/// Reads a golden file, or rewrites it when `UPDATE_GOLDEN` is set.
pub fn golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected =
        std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from the committed golden file"))
    }
}
