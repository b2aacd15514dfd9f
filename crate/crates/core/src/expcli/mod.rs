//! Config-driven experiment commands behind the `ivtlab` binary.
//!
//! Every command writes plain files (CSV, JSON, binary checkpoints) into an
//! output directory and stamps each of them with the digest of the config
//! that produced it. Commands refuse to overwrite an existing output
//! directory unless forced.

mod bundle;
mod config;
mod inspect;
mod quadcheck;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Error;

pub use bundle::{
    cmd_report, cmd_run, BundleManifest, BundleMetrics, ReportOptions, RunOptions, RunSummary,
    SeedMetrics,
};
pub use config::{digest_of, DatasetSpec, EmitOptions, ExperimentConfig, LoadedConfig, StreamSpec};
pub use inspect::{
    cmd_eval, cmd_landscape, cmd_lmc, eval_sets, EvalOptions, LandscapeOptions, LmcOptions,
};
pub use quadcheck::{
    cmd_quadcheck, AssertionOutcome, QuadSuite, QuadcheckOptions, QuadcheckReport,
};

/// Environment variable naming the default root for output directories.
pub const OUTPUT_ROOT_ENV: &str = "IVTLAB_OUTPUT_ROOT";

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Command failure, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or config, refused overwrite, inconsistent inputs.
    #[error("{0}")]
    Usage(String),
    /// A verification suite found a violated property.
    #[error("assertion failed: {0}")]
    Assertion(String),
    /// File system failure or a run that stopped part way.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Assertion(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Checkpoint(_) => {
                CliError::Io(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Resolves where a command writes: an explicit path wins, then the
/// config's own choice under the output root, then `root/<default_name>`.
pub fn resolve_out_dir(
    explicit: Option<&Path>,
    configured: Option<&Path>,
    root: &Path,
    default_name: &str,
) -> PathBuf {
    match (explicit, configured) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) if p.is_absolute() => p.to_path_buf(),
        (None, Some(p)) => root.join(p),
        (None, None) => root.join(default_name),
    }
}

/// Creates `dir`, clearing it first when forced. An existing non-empty
/// directory without `force` is refused.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .next()
            .is_some();
        if occupied {
            if !force {
                return Err(CliError::Usage(format!(
                    "{} already exists; pass --force to overwrite it",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    write_file(path, text + "\n")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}
