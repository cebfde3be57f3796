//! Experiment plumbing behind the command-line tool: declarative configs,
//! dataset generation, seeded training runs, sweeps and reports.

mod config;
mod report;
mod run;
mod sweep;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::AgentError;
use crate::datastore::DatasetError;
use crate::divergence::DivergenceError;
use crate::envs::EnvError;
use crate::evaluation::EvalError;
use crate::neuralnet::NetError;
use crate::tabular::TabularError;

pub use config::{BehaviorKind, ExperimentConfig, GenerateConfig};
pub use report::{
    analyze, dataset_info, divergence_report, tabular_mdp, AnalyzeReport, AnalyzeSummary, DatasetInfo, DivergenceOptions, DivergenceReport,
    HistogramRow, PolicySelector, StateRow, TraceRow,
};
pub use run::{evaluate_checkpoint, generate_dataset, load_or_generate, run_single, train, RunOutput, TrainingRow};
pub use sweep::{sweep, SweepAxis, SweepConfig, SweepSummaryRow};

pub const OUTPUT_ENV_VAR: &str = "BVELAB_OUT";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl ExperimentError {
    /// 2 for bad configuration or inputs, 3 for unreadable or unwritable
    /// files.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_)
            | Self::Dataset(DatasetError::Io(_) | DatasetError::ChecksumMismatch | DatasetError::FormatVersionMismatch(_))
            | Self::Eval(EvalError::Csv(_))
            | Self::Net(NetError::Checkpoint(_) | NetError::Envelope(_)) => 3,
            _ => 2,
        }
    }
}

/// Output root: explicit flag, then `BVELAB_OUT`, then the config's
/// `output_dir`, then `bvelab_out` in the working directory.
pub fn output_root(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV_VAR).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("bvelab_out"))
}

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    format!("{:x}", Sha256::digest(json.as_bytes()))[..16].to_string()
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Sidecar written next to every batch of CSV output. Timestamps live here
/// only, so the CSVs themselves are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    pub fn start<T: Serialize>(command: &str, config: &T) -> Self {
        Self {
            version: format!("bvelab {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("config serializes"),
            artifacts: Vec::new(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn finish(mut self, dir: &Path) -> Result<Self, ExperimentError> {
        self.finished_unix_ms = unix_ms();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self).expect("manifest serializes"))?;
        Ok(self)
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(format!("{}: {e}", dir.display())))
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let file = std::fs::File::create(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    crate::evaluation::write_csv(rows, std::io::BufWriter::new(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        b.training_steps += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExperimentError::Config("x".into()).exit_code(), 2);
        assert_eq!(ExperimentError::Io("x".into()).exit_code(), 3);
        assert_eq!(ExperimentError::Dataset(DatasetError::ChecksumMismatch).exit_code(), 3);
        assert_eq!(ExperimentError::Dataset(DatasetError::EmptyDataset).exit_code(), 2);
    }

    #[test]
    fn explicit_flag_wins_output_root() {
        let p = output_root(Some(Path::new("/tmp/x")), Some(Path::new("/tmp/y")));
        assert_eq!(p, PathBuf::from("/tmp/x"));
    }
}
