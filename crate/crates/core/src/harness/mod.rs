//! Experiment orchestration: oracle construction, resumable sweeps over
//! sampler grids, text export and self-verification.

mod expectations;
mod export;
mod oracle;
mod surrogate;
mod sweep;
pub mod verify;

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::kernel::io::FormatError;
use crate::kernel::KernelError;
use crate::metrics::MetricsError;
use crate::posterior::PosteriorError;
use crate::samplers::SamplerError;

pub use expectations::{metric_value, Check, CheckKind, Expectations};
pub use export::{export_text, TextExport, VocabMap, DEFAULT_PLACEHOLDER};
pub use oracle::{build_oracle, build_oracle_from_counts, count_corpus, CorpusSource, OracleParams, OracleSummary};
pub use surrogate::surrogate_char_chain;
pub use sweep::{
    run_sweep, sha256_hex, CellRecord, CellSpec, FamilyGrid, RunManifest, RunOptions, SweepOutcome, SweepSpec,
    DEFAULT_STEPS,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const ENV_WORKERS: &str = "DLM_WORKERS";
pub const ENV_OUTPUT_DIR: &str = "DLM_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Input(String),
}

/// Environment overrides shared by every command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOverrides {
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

pub fn apply_env() -> Result<EnvOverrides, HarnessError> {
    let workers = match std::env::var(ENV_WORKERS) {
        Ok(s) => Some(
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| HarnessError::Input(format!("{ENV_WORKERS}={s:?} is not a positive integer")))?,
        ),
        Err(_) => None,
    };
    let output_dir = std::env::var_os(ENV_OUTPUT_DIR).map(PathBuf::from);
    Ok(EnvOverrides { workers, output_dir })
}
