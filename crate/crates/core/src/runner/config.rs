use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::baselines::BaselineConfig;
use crate::eval::cross_event::EvalConfig;
use crate::llm::{
    Embedder, HashEmbedder, LlmConfig, ProviderKind, RemoteEmbedder, DEFAULT_EMBED_DIM,
};
use crate::memory::DEFAULT_K;
use crate::patterns::{ClassifierConfig, ClassifierKind, DEFAULT_TRIALS};
use crate::pipeline::{
    Ablation, PipelineConfig, TrainingConfig, DEFAULT_KB_FRAC, DEFAULT_TRAIN_FRAC,
};
use crate::selection::{FitConfig, RegressionFamily, ThetaMode, DEFAULT_REG_STRENGTH};
use crate::tree::DEFAULT_MAX_DEPTH;

use super::RunError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Second event for `cross-eval`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub kb_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: DEFAULT_TRAIN_FRAC,
            kb_frac: DEFAULT_KB_FRAC,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub theta: ThetaMode,
    pub reg_strength: f64,
    pub family: RegressionFamily,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            theta: ThetaMode::Elbow,
            reg_strength: DEFAULT_REG_STRENGTH,
            family: RegressionFamily::Ridge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternsConfig {
    pub trials: usize,
    pub classifier: ClassifierKind,
    pub max_depth: usize,
    pub n_trees: usize,
}

impl Default for PatternsConfig {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            classifier: ClassifierKind::Tree,
            max_depth: DEFAULT_MAX_DEPTH,
            n_trees: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub k: usize,
    pub epochs: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    pub model: String,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim: DEFAULT_EMBED_DIM,
            seed: 0,
            model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_cot: bool,
    pub no_rl: bool,
    pub no_perception: bool,
    pub no_cot_no_rl: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.no_cot || self.no_rl || self.no_perception || self.no_cot_no_rl
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_cot: self.no_cot || self.no_cot_no_rl,
            no_rl: self.no_rl || self.no_cot_no_rl,
            no_perception: self.no_perception,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub splits: SplitConfig,
    pub selection: SelectionConfig,
    pub patterns: PatternsConfig,
    pub memory: MemoryConfig,
    pub llm: LlmConfig,
    pub embedder: EmbedderConfig,
    pub ablation: AblationFlags,
    pub baseline: BaselineConfig,
    pub out: PathBuf,
    /// Directory relative paths resolve against; the config file's folder.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, RunError> {
        let raw: toml::Value =
            toml::from_str(text).map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        if raw.get("llm").and_then(|l| l.get("api_key")).is_some() {
            return Err(RunError::ConfigInvalid(
                "llm.api_key is not accepted; put the key in the environment variable named by llm.api_key_env"
                    .into(),
            ));
        }
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        if cfg.out.as_os_str().is_empty() {
            cfg.out = PathBuf::from("out");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_toml_str(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn stub_transcript_path(&self) -> Option<PathBuf> {
        self.llm.stub_transcript.as_ref().map(|p| self.resolve(p))
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::ConfigInvalid(m));
        let s = &self.splits;
        if !(s.train_frac > 0.0 && s.train_frac < 1.0) {
            return bad(format!(
                "splits.train_frac {} must lie in (0, 1)",
                s.train_frac
            ));
        }
        if !(s.kb_frac > 0.0 && s.kb_frac <= 1.0) {
            return bad(format!("splits.kb_frac {} must lie in (0, 1]", s.kb_frac));
        }
        if self.patterns.trials == 0 {
            return bad("patterns.trials must be at least 1".into());
        }
        if self.memory.k == 0 {
            return bad("memory.k must be at least 1".into());
        }
        if self.embedder.dim == 0 {
            return bad("embedder.dim must be at least 1".into());
        }
        if let ThetaMode::Fixed(t) = self.selection.theta {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("selection.theta {t} must lie in (0, 1]"));
            }
        }
        self.llm
            .validate()
            .map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        let mut files = vec![
            ("data.dataset", &self.data.dataset),
            ("data.schema", &self.data.schema),
        ];
        if let Some(p) = &self.data.test_dataset {
            files.push(("data.test_dataset", p));
        }
        if let Some(p) = &self.data.test_schema {
            files.push(("data.test_schema", p));
        }
        if let (ProviderKind::ScriptedStub, Some(p)) =
            (self.llm.provider, &self.llm.stub_transcript)
        {
            files.push(("llm.stub_transcript", p));
        }
        for (name, p) in files {
            if p.as_os_str().is_empty() {
                return bad(format!("{name} is not set"));
            }
            if !self.resolve(p).is_file() {
                return bad(format!(
                    "{name}: {} does not exist",
                    self.resolve(p).display()
                ));
            }
        }
        if self.llm.provider == ProviderKind::ScriptedStub && self.llm.stub_transcript.is_none() {
            return bad("scripted-stub provider needs llm.stub_transcript".into());
        }
        Ok(())
    }

    /// Hash of everything that shapes artifacts: the config sans output
    /// location, plus the bytes of every input file and stub transcript.
    pub fn config_hash(&self) -> Result<String, RunError> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        let mut inputs = vec![self.data.dataset.clone(), self.data.schema.clone()];
        inputs.extend(self.data.test_dataset.clone());
        inputs.extend(self.data.test_schema.clone());
        if self.llm.provider == ProviderKind::ScriptedStub {
            inputs.extend(self.llm.stub_transcript.clone());
        }
        for p in inputs {
            let bytes = std::fs::read(self.resolve(&p)).map_err(|e| RunError::Io(e.to_string()))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            kb_frac: self.splits.kb_frac,
            theta: self.selection.theta,
            fit: FitConfig {
                reg_strength: self.selection.reg_strength,
                family: self.selection.family,
            },
            trials: self.patterns.trials,
            classifier: self.classifier_config(),
            pipeline: self.pipeline_config(self.ablation.ablation()),
            epochs: self.memory.epochs,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            kind: self.patterns.classifier,
            max_depth: self.patterns.max_depth,
            n_trees: self.patterns.n_trees,
            seed: self.splits.seed,
        }
    }

    pub fn pipeline_config(&self, ablation: Ablation) -> PipelineConfig {
        PipelineConfig {
            k: self.memory.k,
            ablation,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            training: self.training_config(),
            baseline: self.baseline.clone(),
        }
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>, RunError> {
        Ok(match self.embedder.kind {
            EmbedderKind::Hash => {
                Box::new(HashEmbedder::new(self.embedder.dim, self.embedder.seed))
            }
            EmbedderKind::Remote => Box::new(
                RemoteEmbedder::from_config(&self.llm, &self.embedder.model, self.embedder.dim)
                    .map_err(|e| RunError::ConfigInvalid(e.to_string()))?,
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_flag_implication() {
        let cfg =
            RunConfig::from_toml_str("[ablation]\nno_cot_no_rl = true\n", Path::new(".")).unwrap();
        assert_eq!(cfg.splits.train_frac, 0.8);
        assert_eq!(cfg.splits.kb_frac, 0.7);
        assert_eq!(cfg.memory.k, 2);
        assert_eq!(cfg.ablation.ablation().label(), "FLARE w/o CoT and RL");
        assert_eq!(cfg.out, PathBuf::from("out"));
    }

    #[test]
    fn key_literals_and_unknown_fields_rejected() {
        let err =
            RunConfig::from_toml_str("[llm]\napi_key = \"sk-123\"\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("api_key_env"));
        assert!(
            RunConfig::from_toml_str("[splits]\ntrain_fraction = 0.5\n", Path::new(".")).is_err()
        );
    }

    #[test]
    fn theta_parses_from_string() {
        let cfg =
            RunConfig::from_toml_str("[selection]\ntheta = \"0.7\"\n", Path::new(".")).unwrap();
        assert_eq!(cfg.selection.theta, ThetaMode::Fixed(0.7));
        let cfg =
            RunConfig::from_toml_str("[selection]\ntheta = \"all\"\n", Path::new(".")).unwrap();
        assert_eq!(cfg.selection.theta, ThetaMode::All);
    }

    #[test]
    fn validation_checks_files() {
        let cfg = RunConfig::from_toml_str(
            "[data]\ndataset = \"missing.csv\"\nschema = \"missing.json\"\n",
            Path::new("/nonexistent"),
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(RunError::ConfigInvalid(_))));
    }
}
