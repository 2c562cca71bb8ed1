use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_dataset, manifest, split_dataset, Dataset, DatasetManifest, DecisionValue, EncodingStats,
    SplitMode, SurveySchema,
};
use crate::eval::baselines::{direct_llm_baseline, tabular_baseline, TabularKind};
use crate::eval::cross_event::{cross_event_evaluate, Method};
use crate::eval::{score_predictions, EvaluationReport, PerceptionScores, ReportRow};
use crate::llm::{fan_out, Embedder, LlmClient, LlmConfig, ProviderKind};
use crate::memory::{compact, predict_all, MemoryStore};
use crate::patterns::{
    enumerate_patterns, label_records, PatternClassifier, PatternTrialReport, ReasoningPattern,
};
use crate::perception::{build_knowledge_base, KnowledgeBase};
use crate::pipeline::{
    fit_classifier, in_stored_order, kb_partition, train_memory, Ablation, FlarePipeline,
    PipelineError, PredictionOutcome, TrainedArtifacts,
};
use crate::selection::{select_all, ThetaMode, VariableSubset, WeightVector};

use super::ledger::{unix_now, OutputLock, RunLedger, StageEntry};
use super::{RunConfig, RunError, Stage};

const TRAIN_CSV: &str = "train.csv";
const TEST_CSV: &str = "test.csv";
const MANIFEST: &str = "manifest.json";
const SELECTION: &str = "selection.json";
const LABELS: &str = "pattern_labels.json";
const CLASSIFIER: &str = "classifier.json";
const KB: &str = "knowledge_base.json";
const MEMORY: &str = "memory.jsonl";
const TRAIN_STEPS: &str = "train_steps.json";
const PREDICTIONS: &str = "predictions.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    /// Rendered report table for reporting stages.
    #[serde(skip)]
    pub table: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Provenanced<T> {
    provenance: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestBody {
    manifest: DatasetManifest,
    n_train: usize,
    n_test: usize,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionBody {
    theta_mode: ThetaMode,
    stats: EncodingStats,
    weights: Vec<WeightVector>,
    subsets: Vec<VariableSubset>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsBody {
    patterns: Vec<ReasoningPattern>,
    reports: Vec<PatternTrialReport>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierBody {
    classifier: PatternClassifier,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepsBody {
    method: String,
    steps: Vec<crate::memory::TrainStep>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outcome: Option<PredictionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionsBody {
    method: String,
    predictions: Vec<PredictionRow>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    stage: Stage,
    out: PathBuf,
    hash: String,
    written: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String, RunError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl Ctx<'_> {
    fn write_text(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        fs::write(self.out.join(name), text)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, body: T) -> Result<(), RunError> {
        let value = Provenanced {
            provenance: self.hash.clone(),
            body,
        };
        let text = serde_json::to_string_pretty(&value).expect("artifact serializes") + "\n";
        self.write_text(name, &text)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, RunError> {
        let path = self.out.join(name);
        let text = fs::read_to_string(&path)?;
        let v: Provenanced<T> = serde_json::from_str(&text)
            .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        if v.provenance != self.hash {
            log::debug!("{name} was produced under a different configuration");
        }
        Ok(v.body)
    }

    fn schema(&self) -> Result<SurveySchema, RunError> {
        Ok(SurveySchema::from_path(
            self.cfg.resolve(&self.cfg.data.schema),
        )?)
    }

    fn split(&self, name: &str) -> Result<Dataset, RunError> {
        Ok(load_dataset(self.out.join(name), &self.schema()?)?)
    }

    fn llm(&self) -> Result<LlmClient, RunError> {
        let mut llm_cfg: LlmConfig = self.cfg.llm.clone();
        llm_cfg.stub_transcript = self.cfg.stub_transcript_path();
        Ok(LlmClient::from_config(&llm_cfg)?.0)
    }

    fn trained(&self) -> Result<TrainedArtifacts, RunError> {
        let sel: SelectionBody = self.read_json(SELECTION)?;
        let labels: LabelsBody = self.read_json(LABELS)?;
        let cls: ClassifierBody = self.read_json(CLASSIFIER)?;
        let kb = KnowledgeBase::load(fs::File::open(self.out.join(KB))?)?;
        Ok(TrainedArtifacts {
            schema: self.schema()?,
            stats: sel.stats,
            subsets: sel.subsets,
            patterns: labels.patterns,
            classifier: cls.classifier,
            kb,
            provenance: self.hash.clone(),
        })
    }
}

/// Runs one stage against the configured output directory.
pub fn run(stage: Stage, cfg: &RunConfig) -> Result<StageSummary, RunError> {
    cfg.validate()?;
    let out = cfg.out_dir();
    let _lock = OutputLock::acquire(&out)?;
    let mut ledger = RunLedger::load(&out)?;
    let hash = cfg.config_hash()?;
    for &needed in stage.upstream() {
        let entry = ledger.require(stage, needed, &out)?;
        if entry.config_hash != hash {
            log::info!("{needed} artifacts were produced under a different configuration");
        }
    }
    let stub_transcript_hash = match (cfg.llm.provider, cfg.stub_transcript_path()) {
        (ProviderKind::ScriptedStub, Some(p)) => Some(sha256_file(&p)?),
        _ => None,
    };
    let started_at = unix_now();
    let mut ctx = Ctx {
        cfg,
        stage,
        out: out.clone(),
        hash: hash.clone(),
        written: Vec::new(),
    };
    let embedder = cfg.build_embedder()?;
    let table = match stage {
        Stage::Ingest => ingest(&mut ctx)?,
        Stage::SelectVars => select_vars(&mut ctx)?,
        Stage::LabelPatterns => label_patterns(&mut ctx, embedder.as_ref())?,
        Stage::TrainClassifier => train_classifier(&mut ctx)?,
        Stage::BuildKb => build_kb(&mut ctx, embedder.as_ref())?,
        Stage::TrainMemory => train_memory_stage(&mut ctx, embedder.as_ref())?,
        Stage::Predict => predict(&mut ctx, embedder.as_ref())?,
        Stage::Evaluate => Some(evaluate(&mut ctx)?),
        Stage::CrossEval => Some(cross_eval(&mut ctx, embedder.as_ref())?),
        Stage::Ablate => Some(ablate(&mut ctx, embedder.as_ref())?),
        Stage::CompactMemory => compact_memory(&mut ctx)?,
    };
    let artifacts = std::mem::take(&mut ctx.written);
    ledger.record(
        stage,
        StageEntry {
            config_hash: hash.clone(),
            artifacts: artifacts.clone(),
            started_at,
            finished_at: unix_now(),
            stub_transcript_hash,
        },
    );
    ledger.save(&out)?;
    log::info!("{} wrote {}", ctx.stage, artifacts.join(", "));
    Ok(StageSummary {
        stage: stage.to_string(),
        config_hash: hash,
        artifacts,
        table,
    })
}

fn ingest(ctx: &mut Ctx<'_>) -> Result<Option<String>, RunError> {
    let schema = ctx.schema()?;
    let full = load_dataset(ctx.cfg.resolve(&ctx.cfg.data.dataset), &schema)?;
    let man = manifest(&full)?;
    let s = ctx.cfg.splits;
    let parts = split_dataset(
        &full,
        &[s.train_frac, 1.0 - s.train_frac],
        s.seed,
        SplitMode::Shuffled,
    )?;
    let train = in_stored_order(&full, &parts[0]);
    let test = in_stored_order(&full, &parts[1]);
    for (name, ds) in [(TRAIN_CSV, &train), (TEST_CSV, &test)] {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf)?;
        ctx.write_text(name, std::str::from_utf8(&buf).expect("csv is utf-8"))?;
    }
    ctx.write_json(
        MANIFEST,
        ManifestBody {
            manifest: man,
            n_train: train.len(),
            n_test: test.len(),
            seed: s.seed,
        },
    )?;
    Ok(None)
}

fn select_vars(ctx: &mut Ctx<'_>) -> Result<Option<String>, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let tc = ctx.cfg.training_config();
    let stats = EncodingStats::fit(&train)?;
    let (weights, subsets) =
        select_all(&train, &stats, &tc.fit, tc.theta).map_err(PipelineError::from)?;
    ctx.write_json(
        SELECTION,
        SelectionBody {
            theta_mode: tc.theta,
            stats,
            weights,
            subsets,
        },
    )?;
    Ok(None)
}

fn label_patterns(ctx: &mut Ctx<'_>, embedder: &dyn Embedder) -> Result<Option<String>, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let sel: SelectionBody = ctx.read_json(SELECTION)?;
    let patterns = enumerate_patterns(&sel.subsets).map_err(PipelineError::from)?;
    let llm = ctx.llm()?;
    let reports = label_records(
        &train.records,
        &train.schema,
        &patterns,
        &llm,
        embedder,
        ctx.cfg.patterns.trials,
    )
    .map_err(PipelineError::from)?;
    ctx.write_json(LABELS, LabelsBody { patterns, reports })?;
    Ok(None)
}

fn train_classifier(ctx: &mut Ctx<'_>) -> Result<Option<String>, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let sel: SelectionBody = ctx.read_json(SELECTION)?;
    let labels: LabelsBody = ctx.read_json(LABELS)?;
    let classifier = fit_classifier(
        &train,
        &sel.stats,
        &sel.subsets,
        &labels.reports,
        &ctx.cfg.classifier_config(),
    )?;
    ctx.write_json(CLASSIFIER, ClassifierBody { classifier })?;
    Ok(None)
}

fn build_kb(ctx: &mut Ctx<'_>, embedder: &dyn Embedder) -> Result<Option<String>, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let labels: LabelsBody = ctx.read_json(LABELS)?;
    let part = kb_partition(&train, ctx.cfg.splits.kb_frac)?;
    let assignments: HashMap<String, usize> = labels
        .reports
        .iter()
        .map(|r| (r.record_id.clone(), r.label))
        .collect();
    let llm = ctx.llm()?;
    let mut kb = build_knowledge_base(&part, &assignments, &labels.patterns, &llm, embedder)?;
    kb.provenance = Some(ctx.hash.clone());
    let mut buf = Vec::new();
    kb.save(&mut buf)?;
    ctx.write_text(KB, std::str::from_utf8(&buf).expect("json is utf-8"))?;
    Ok(None)
}

fn train_memory_stage(
    ctx: &mut Ctx<'_>,
    embedder: &dyn Embedder,
) -> Result<Option<String>, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let trained = ctx.trained()?;
    let ablation = ctx.cfg.ablation.ablation();
    let llm = ctx.llm()?;
    let (store, steps) = train_memory(
        &train,
        &trained,
        ctx.cfg.pipeline_config(ablation),
        ctx.cfg.memory.epochs,
        &llm,
        embedder,
    )?;
    let mut buf = Vec::new();
    store.save(&mut buf)?;
    ctx.write_text(MEMORY, std::str::from_utf8(&buf).expect("jsonl is utf-8"))?;
    ctx.write_json(
        TRAIN_STEPS,
        StepsBody {
            method: ablation.label(),
            steps,
        },
    )?;
    Ok(None)
}

fn run_predictions(
    records: &[crate::dataset::SurveyRecord],
    trained: &TrainedArtifacts,
    store: &MemoryStore,
    llm: &LlmClient,
    embedder: &dyn Embedder,
    config: crate::pipeline::PipelineConfig,
) -> Vec<PredictionRow> {
    let pipeline = FlarePipeline {
        artifacts: trained,
        llm,
        embedder,
        config,
    };
    predict_all(records, &pipeline, store)
        .into_iter()
        .zip(records)
        .map(|(r, rec)| match r {
            Ok(o) => PredictionRow {
                record_id: rec.record_id.clone(),
                outcome: Some(o),
                error: None,
            },
            Err(e) => {
                log::warn!("prediction for {} failed: {e}", rec.record_id);
                PredictionRow {
                    record_id: rec.record_id.clone(),
                    outcome: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect()
}

fn predict(ctx: &mut Ctx<'_>, embedder: &dyn Embedder) -> Result<Option<String>, RunError> {
    let test = ctx.split(TEST_CSV)?;
    let trained = ctx.trained()?;
    let store = MemoryStore::load(fs::File::open(ctx.out.join(MEMORY))?)?;
    let ablation = ctx.cfg.ablation.ablation();
    let llm = ctx.llm()?;
    let predictions = run_predictions(
        &test.records,
        &trained,
        &store,
        &llm,
        embedder,
        ctx.cfg.pipeline_config(ablation),
    );
    ctx.write_json(
        PREDICTIONS,
        PredictionsBody {
            method: ablation.label(),
            predictions,
        },
    )?;
    Ok(None)
}

fn flare_row(
    label: &str,
    test: &Dataset,
    predictions: &[PredictionRow],
) -> Result<(ReportRow, PerceptionScores), RunError> {
    let preds: Vec<Result<DecisionValue, ()>> = predictions
        .iter()
        .map(|p| p.outcome.as_ref().map(|o| o.decision.value).ok_or(()))
        .collect();
    let mut row = score_predictions(label, &test.records, &preds)?;
    let scores = PerceptionScores::collect(
        &test.records,
        predictions.iter().map(|p| p.outcome.as_ref()),
    );
    row.metrics.mse = scores.mse();
    Ok((row, scores))
}

fn baseline_rows(
    ctx: &Ctx<'_>,
    train: &Dataset,
    test: &Dataset,
    llm: &LlmClient,
) -> Result<Vec<ReportRow>, RunError> {
    let mut rows = Vec::new();
    for kind in [
        TabularKind::Logistic,
        TabularKind::Tree,
        TabularKind::Forest,
    ] {
        let preds: Vec<Result<DecisionValue, ()>> =
            tabular_baseline(kind, train, test, &ctx.cfg.baseline)?
                .into_iter()
                .map(Ok)
                .collect();
        rows.push(score_predictions(kind.label(), &test.records, &preds)?);
    }
    let direct = fan_out(&test.records, llm.concurrency_bound(), |r| {
        direct_llm_baseline(r, &test.schema, llm).map(|d| d.value)
    });
    rows.push(score_predictions(
        &Method::DirectLlm.label(),
        &test.records,
        &direct,
    )?);
    Ok(rows)
}

fn write_report(
    ctx: &mut Ctx<'_>,
    stem: &str,
    report: &EvaluationReport,
) -> Result<String, RunError> {
    let table = report.render_table();
    ctx.write_text(&format!("{stem}.json"), &report.to_json())?;
    ctx.write_text(&format!("{stem}.txt"), &table)?;
    Ok(table)
}

fn evaluate(ctx: &mut Ctx<'_>) -> Result<String, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let test = ctx.split(TEST_CSV)?;
    let preds: PredictionsBody = ctx.read_json(PREDICTIONS)?;
    let (row, scores) = flare_row(&preds.method, &test, &preds.predictions)?;
    let llm = ctx.llm()?;
    let mut rows = vec![row];
    rows.extend(baseline_rows(ctx, &train, &test, &llm)?);
    let report = EvaluationReport {
        dataset: test.schema.event_name.clone(),
        provenance: Some(ctx.hash.clone()),
        rows,
    };
    if !scores.threat_actual.is_empty() || !scores.risk_actual.is_empty() {
        let (threat, risk) = scores.heatmaps()?;
        ctx.write_text("threat_heatmap.csv", &threat.to_csv())?;
        ctx.write_text("threat_heatmap.svg", &threat.to_svg("Threat assessment"))?;
        ctx.write_text("risk_heatmap.csv", &risk.to_csv())?;
        ctx.write_text("risk_heatmap.svg", &risk.to_svg("Risk perception"))?;
    }
    write_report(ctx, "report", &report)
}

fn ablate(ctx: &mut Ctx<'_>, embedder: &dyn Embedder) -> Result<String, RunError> {
    let train = ctx.split(TRAIN_CSV)?;
    let test = ctx.split(TEST_CSV)?;
    let trained = ctx.trained()?;
    let llm = ctx.llm()?;
    let configs: Vec<Ablation> = if ctx.cfg.ablation.any() {
        vec![ctx.cfg.ablation.ablation()]
    } else {
        Ablation::TABLE_ROWS.to_vec()
    };
    let mut rows = Vec::new();
    for ablation in configs {
        let pc = ctx.cfg.pipeline_config(ablation);
        let (store, _) = train_memory(&train, &trained, pc, ctx.cfg.memory.epochs, &llm, embedder)?;
        let predictions = run_predictions(&test.records, &trained, &store, &llm, embedder, pc);
        rows.push(flare_row(&ablation.label(), &test, &predictions)?.0);
    }
    let report = EvaluationReport {
        dataset: test.schema.event_name.clone(),
        provenance: Some(ctx.hash.clone()),
        rows,
    };
    write_report(ctx, "ablation_report", &report)
}

fn cross_eval(ctx: &mut Ctx<'_>, embedder: &dyn Embedder) -> Result<String, RunError> {
    let data = &ctx.cfg.data;
    let (Some(test_path), Some(test_schema)) = (&data.test_dataset, &data.test_schema) else {
        return Err(RunError::ConfigInvalid(
            "cross-eval needs data.test_dataset and data.test_schema".into(),
        ));
    };
    let train = load_dataset(ctx.cfg.resolve(&data.dataset), &ctx.schema()?)?;
    let test_schema = SurveySchema::from_path(ctx.cfg.resolve(test_schema))?;
    let test = load_dataset(ctx.cfg.resolve(test_path), &test_schema)?;
    let llm = ctx.llm()?;
    let eval_cfg = ctx.cfg.eval_config();
    let methods = [
        Method::Flare {
            ablation: ctx.cfg.ablation.ablation(),
        },
        Method::Tabular {
            kind: TabularKind::Logistic,
        },
        Method::Tabular {
            kind: TabularKind::Tree,
        },
        Method::Tabular {
            kind: TabularKind::Forest,
        },
        Method::DirectLlm,
    ];
    let mut rows = Vec::new();
    let mut provenance = None;
    for m in methods {
        let run = cross_event_evaluate(&train, &test, m, &eval_cfg, &llm, embedder)?;
        provenance = Some(run.provenance);
        rows.push(run.row);
    }
    let report = EvaluationReport {
        dataset: format!("{} -> {}", train.schema.event_name, test.schema.event_name),
        provenance,
        rows,
    };
    write_report(ctx, "cross_eval_report", &report)
}

fn compact_memory(ctx: &mut Ctx<'_>) -> Result<Option<String>, RunError> {
    let path = ctx.out.join(MEMORY);
    let mut buf = Vec::new();
    let n = compact(fs::File::open(&path)?, &mut buf)?;
    let tmp = ctx.out.join(format!("{MEMORY}.tmp"));
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, &path)?;
    ctx.written.push(MEMORY.to_string());
    log::info!("compacted {n} memory entries");
    Ok(None)
}
