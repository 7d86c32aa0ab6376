//! Pipeline driver: configuration handling and the preprocess → factorize
//! → report stages, with on-disk caches so factorization can be re-run
//! without re-ingesting recordings.

pub mod config;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{
    cmd_factorize, cmd_preprocess, cmd_report, cmd_run, cmd_synth, PipelineOutcome,
};

use thiserror::Error;

/// CLI-level error classification. The variant decides the process exit
/// code: config errors exit 2, data errors 3, numerical errors 4.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<gazenmf::ingest::IngestError> for CliError {
    fn from(e: gazenmf::ingest::IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<gazenmf::patchgrid::PatchError> for CliError {
    fn from(e: gazenmf::patchgrid::PatchError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<gazenmf::nmf::NmfError> for CliError {
    fn from(e: gazenmf::nmf::NmfError) -> Self {
        use gazenmf::nmf::NmfError::*;
        match e {
            RankOutOfRange { .. } | DegenerateInput | InvalidOptions(_) | DimensionMismatch(_) => {
                CliError::Numerical(e.to_string())
            }
            Cache(_) | UnsupportedVersion { .. } | Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<gazenmf::components::ComponentsError> for CliError {
    fn from(e: gazenmf::components::ComponentsError) -> Self {
        use gazenmf::components::ComponentsError::*;
        match e {
            AllZeroTemporal => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<gazenmf::synth::SynthError> for CliError {
    fn from(e: gazenmf::synth::SynthError) -> Self {
        use gazenmf::synth::SynthError::*;
        match e {
            InvalidSpec(_) => CliError::Config(e.to_string()),
            KMismatch { .. } => CliError::Numerical(e.to_string()),
            Ingest(_) | Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<gazenmf::report::ReportError> for CliError {
    fn from(e: gazenmf::report::ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
