use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{RunError, Stage};

pub const LEDGER_FILE: &str = "ledger.json";
pub const LOCK_FILE: &str = ".flare.lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub config_hash: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub started_at: u64,
    pub finished_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_transcript_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunLedger {
    pub stages: BTreeMap<String, StageEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunLedger {
    pub fn load(out: &Path) -> Result<Self, RunError> {
        let path = out.join(LEDGER_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| RunError::Io(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, out: &Path) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(self).expect("ledger serializes") + "\n";
        fs::write(out.join(LEDGER_FILE), text)?;
        Ok(())
    }

    pub fn entry(&self, stage: Stage) -> Option<&StageEntry> {
        self.stages.get(stage.as_str())
    }

    /// The upstream entry, provided every artifact it lists still exists.
    pub fn require(
        &self,
        stage: Stage,
        needed: Stage,
        out: &Path,
    ) -> Result<&StageEntry, RunError> {
        let missing = RunError::MissingUpstreamArtifact { stage, needed };
        let entry = self.entry(needed).ok_or(missing)?;
        if entry.artifacts.iter().any(|a| !out.join(a).is_file()) {
            return Err(RunError::MissingUpstreamArtifact { stage, needed });
        }
        Ok(entry)
    }

    pub fn record(&mut self, stage: Stage, entry: StageEntry) {
        self.stages.insert(stage.as_str().to_string(), entry);
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(out)?;
        let path = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(RunError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            OutputLock::acquire(dir.path()),
            Err(RunError::Locked(_))
        ));
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn require_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = RunLedger::default();
        assert!(l
            .require(Stage::Predict, Stage::TrainMemory, dir.path())
            .is_err());
        l.record(
            Stage::TrainMemory,
            StageEntry {
                config_hash: "h".into(),
                artifacts: vec!["memory.jsonl".into()],
                started_at: 0,
                finished_at: 0,
                stub_transcript_hash: None,
            },
        );
        assert!(l
            .require(Stage::Predict, Stage::TrainMemory, dir.path())
            .is_err());
        fs::write(dir.path().join("memory.jsonl"), "{}\n").unwrap();
        assert!(l
            .require(Stage::Predict, Stage::TrainMemory, dir.path())
            .is_ok());
        l.save(dir.path()).unwrap();
        assert_eq!(RunLedger::load(dir.path()).unwrap(), l);
    }
}
