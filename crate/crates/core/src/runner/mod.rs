//! Resumable pipeline stages behind the `flare` command line. Each stage reads
//! its inputs from the run ledger in the output directory and records what it
//! wrote.

pub mod config;
pub mod ledger;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::eval::cross_event::EvalError;
use crate::eval::metrics::MetricsError;
use crate::llm::LlmError;
use crate::memory::MemoryError;
use crate::perception::PerceptionError;
use crate::pipeline::PipelineError;

pub use config::RunConfig;
pub use ledger::{OutputLock, RunLedger, StageEntry};
pub use stages::{run, StageSummary};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("stage `{stage}` needs the output of `{needed}`; run it first")]
    MissingUpstreamArtifact { stage: Stage, needed: Stage },
    #[error("output directory is locked by another run: {0}")]
    Locked(PathBuf),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Debug, Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    needed: Option<String>,
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::ConfigInvalid(_) => "ConfigInvalid",
            RunError::MissingUpstreamArtifact { .. } => "MissingUpstreamArtifact",
            RunError::Locked(_) => "Locked",
            RunError::Io(_) => "Io",
            RunError::Llm(_) => "LlmFailure",
            RunError::Dataset(_) => "Dataset",
            RunError::Pipeline(_) => "Pipeline",
            RunError::Eval(EvalError::SchemaMismatch(_)) => "SchemaMismatch",
            RunError::Eval(_) => "Evaluation",
            RunError::Metrics(_) => "Metrics",
            RunError::Memory(_) => "Memory",
            RunError::Perception(_) => "Perception",
        }
    }

    /// Machine-readable form printed by the CLI on failure.
    pub fn to_json(&self) -> String {
        let (stage, needed) = match self {
            RunError::MissingUpstreamArtifact { stage, needed } => {
                (Some(stage.to_string()), Some(needed.to_string()))
            }
            _ => (None, None),
        };
        serde_json::to_string(&ErrorJson {
            error: self.kind(),
            message: self.to_string(),
            stage,
            needed,
        })
        .expect("error serializes")
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigInvalid(_) => 2,
            RunError::MissingUpstreamArtifact { .. } => 3,
            RunError::Locked(_) => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    SelectVars,
    LabelPatterns,
    TrainClassifier,
    BuildKb,
    TrainMemory,
    Predict,
    Evaluate,
    CrossEval,
    Ablate,
    CompactMemory,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Ingest,
        Stage::SelectVars,
        Stage::LabelPatterns,
        Stage::TrainClassifier,
        Stage::BuildKb,
        Stage::TrainMemory,
        Stage::Predict,
        Stage::Evaluate,
        Stage::CrossEval,
        Stage::Ablate,
        Stage::CompactMemory,
    ];

    /// The full single-event sequence, in order.
    pub const SEQUENCE: [Stage; 8] = [
        Stage::Ingest,
        Stage::SelectVars,
        Stage::LabelPatterns,
        Stage::TrainClassifier,
        Stage::BuildKb,
        Stage::TrainMemory,
        Stage::Predict,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::SelectVars => "select-vars",
            Stage::LabelPatterns => "label-patterns",
            Stage::TrainClassifier => "train-classifier",
            Stage::BuildKb => "build-kb",
            Stage::TrainMemory => "train-memory",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::CrossEval => "cross-eval",
            Stage::Ablate => "ablate",
            Stage::CompactMemory => "compact-memory",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest | Stage::CrossEval => &[],
            Stage::SelectVars => &[Stage::Ingest],
            Stage::LabelPatterns => &[Stage::Ingest, Stage::SelectVars],
            Stage::TrainClassifier => &[Stage::Ingest, Stage::SelectVars, Stage::LabelPatterns],
            Stage::BuildKb => &[Stage::Ingest, Stage::SelectVars, Stage::LabelPatterns],
            Stage::TrainMemory | Stage::Ablate => &[
                Stage::Ingest,
                Stage::SelectVars,
                Stage::LabelPatterns,
                Stage::TrainClassifier,
                Stage::BuildKb,
            ],
            Stage::Predict => &[
                Stage::Ingest,
                Stage::SelectVars,
                Stage::LabelPatterns,
                Stage::TrainClassifier,
                Stage::BuildKb,
                Stage::TrainMemory,
            ],
            Stage::Evaluate => &[Stage::Ingest, Stage::Predict],
            Stage::CompactMemory => &[Stage::TrainMemory],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| RunError::ConfigInvalid(format!("unknown command `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("train".parse::<Stage>().is_err());
    }

    #[test]
    fn upstream_is_a_dag_over_earlier_stages() {
        for s in Stage::ALL {
            for u in s.upstream() {
                assert!(u < &s, "{u} must precede {s}");
            }
        }
    }

    #[test]
    fn error_json_is_machine_readable() {
        let e = RunError::MissingUpstreamArtifact {
            stage: Stage::Predict,
            needed: Stage::TrainMemory,
        };
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "MissingUpstreamArtifact");
        assert_eq!(v["needed"], "train-memory");
        assert_eq!(e.exit_code(), 3);
    }
}
