//! Ensemble experiments, configuration, CSV output and the command-line
//! runner built on [`heatavg_core`].

pub mod config;
pub mod ensemble;
pub mod output;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, ExperimentKind, Overrides, RunConfig};
pub use ensemble::{run_ensemble, EnsembleResult, EnsembleSpec, Experiment};
pub use output::{emit_csv, parse_csv, CsvTable, RunManifest, Verdict};
pub use runner::run;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid ensemble setting `{key}`: {reason}")]
    Spec { key: &'static str, reason: String },
    #[error("solver error: {0}")]
    Solver(#[from] heatavg_core::Error),
    #[error("{aborted} of {total} realizations of `{series}` aborted at eps = {eps} (limit 1%)")]
    TooManyAborts { series: String, eps: f64, aborted: usize, total: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Process exit code: 2–4 for configuration problems, 5 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(e) => e.exit_code(),
            RunError::Spec { .. } => 4,
            _ => 5,
        }
    }
}
