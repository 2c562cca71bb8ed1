mod common;

use flare_core::dataset::Dataset;
use flare_core::eval::baselines::TabularKind;
use flare_core::eval::cross_event::{
    cross_event_evaluate, dataset_hash, project_dataset, reconcile_schemas, EvalConfig, EvalError,
    Method,
};
use flare_core::llm::ScriptEntry;
use flare_core::pipeline::Ablation;
use flare_core::runner::{run, RunConfig, Stage};

/// Every call about a record is answered with that record's true decision.
fn truthful(ds: &Dataset) -> Vec<ScriptEntry> {
    let mut entries = common::perception_entries();
    for r in &ds.records {
        entries.push(
            ScriptEntry::always("", common::answer(r.decision))
                .for_request(&format!("{}/", r.record_id)),
        );
    }
    entries
}

fn quick_config() -> EvalConfig {
    let mut cfg = EvalConfig::default();
    cfg.training.trials = 2;
    cfg
}

#[test]
fn identity_transfer_with_a_truthful_model_is_perfect() {
    let ds = common::mini();
    let emb = common::embedder();
    let (llm, _) = common::client(truthful(&ds));
    let run = cross_event_evaluate(
        &ds,
        &ds,
        Method::Flare {
            ablation: Ablation::FULL,
        },
        &quick_config(),
        &llm,
        &emb,
    )
    .unwrap();
    assert_eq!(run.row.metrics.accuracy, 1.0);
    assert!(run.row.failed.is_empty());
    assert_eq!(run.row.method, "FLARE");
    let out = run.training.unwrap();
    assert!(
        out.store.is_empty(),
        "a truthful model makes no training errors"
    );
    assert!(out.reports.iter().all(|r| r.rates == [1.0; 4]));
}

#[test]
fn disjoint_questionnaires_are_refused() {
    let a = common::mini();
    let mut b = a.clone();
    for v in &mut b.schema.variables {
        if v.name != b.schema.decision_column {
            v.name = format!("b_{}", v.name);
        }
    }
    b.schema.context_columns.clear();
    b.schema.indicators = None;
    b.schema.classifier_extras.clear();
    assert!(matches!(
        reconcile_schemas(&a.schema, &b.schema),
        Err(EvalError::SchemaMismatch(_))
    ));
    let (llm, stub) = common::client(Vec::new());
    for method in [
        Method::Flare {
            ablation: Ablation::FULL,
        },
        Method::Tabular {
            kind: TabularKind::Tree,
        },
        Method::DirectLlm,
    ] {
        let r = cross_event_evaluate(&a, &b, method, &quick_config(), &llm, &common::embedder());
        assert!(
            matches!(r, Err(EvalError::SchemaMismatch(_))),
            "{}",
            method.label()
        );
    }
    assert_eq!(stub.call_count(), 0);
}

#[test]
fn unshared_variables_are_dropped_before_training() {
    let a = common::synthetic();
    let b = common::synthetic_event_b();
    let s = reconcile_schemas(&a.schema, &b.schema).unwrap();
    let names: Vec<&str> = s.variables.iter().map(|v| v.name.as_str()).collect();
    assert!(!names.contains(&"has_pets") && !names.contains(&"distance_km"));
    assert!(names.contains(&"saw_flames") && names.contains(&"evacuated"));
    assert!(s.indicators.is_some());
}

#[test]
fn provenance_ignores_the_test_event() {
    let a = common::mini();
    let mut b = common::mini();
    b.records.truncate(6);
    let emb = common::embedder();
    let method = Method::Tabular {
        kind: TabularKind::Logistic,
    };
    let (llm, _) = common::client(Vec::new());
    let full = cross_event_evaluate(&a, &a, method, &quick_config(), &llm, &emb).unwrap();
    let part = cross_event_evaluate(&a, &b, method, &quick_config(), &llm, &emb).unwrap();
    assert_eq!(full.provenance, part.provenance);
    let shared = reconcile_schemas(&a.schema, &b.schema).unwrap();
    assert_eq!(full.provenance, dataset_hash(&project_dataset(&a, &shared)));
    assert_ne!(dataset_hash(&a), dataset_hash(&b));
}

/// The bundled A -> B run reproduces its committed report.
#[test]
fn golden_cross_event_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&common::synthetic_dir().join("config.toml")).unwrap();
    cfg.out = dir.path().to_path_buf();
    let summary = run(Stage::CrossEval, &cfg).unwrap();
    let table = summary.table.unwrap();
    for label in [
        "FLARE",
        "Logistic Regression",
        "Decision Tree",
        "Random Forest",
        "LLM Inference",
    ] {
        assert!(table.contains(label), "{label} missing from\n{table}");
    }
    let report = std::fs::read_to_string(dir.path().join("cross_eval_report.json")).unwrap();
    common::golden("synthetic_cross_eval_report.json", &report).unwrap();
}
