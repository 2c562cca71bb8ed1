//! FLARE: perception-grounded chain-of-thought prediction of wildfire
//! evacuation decisions, with retrieval calibration and a reflective memory.
//!
//! The crate is organised as the pipeline runs: [`dataset`] ingestion,
//! [`selection`] of relevant variables, [`patterns`] and [`perception`],
//! [`cot`] prompt assembly, the [`memory`] loop, and [`eval`]. All model calls
//! go through [`llm::LlmClient`].

pub mod cot;
pub mod dataset;
pub mod eval;
pub mod llm;
pub mod memory;
pub mod patterns;
pub mod perception;
pub mod pipeline;
pub mod runner;
pub mod selection;
pub mod similarity;
pub mod tree;

pub use cot::{CotInstance, Decision, Template, TemplateSet};
pub use dataset::{Dataset, DecisionValue, SurveyRecord, SurveySchema};
pub use eval::metrics::{compute_metrics, ConfusionMatrix, MetricsReport};
pub use eval::EvaluationReport;
pub use llm::{Embedder, HashEmbedder, LlmClient, LlmConfig, ScriptedStub};
pub use memory::{MemoryEntry, MemoryStore, StoreMode};
pub use patterns::{PatternClassifier, ReasoningPattern};
pub use perception::{KnowledgeBase, PerceptionResult};
pub use pipeline::{Ablation, PipelineConfig, PipelineError, PredictionOutcome, TrainedArtifacts};
pub use selection::{IndicatorKind, ThetaMode, VariableSubset, WeightVector};
