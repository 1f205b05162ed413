//! Error-to-exit-code mapping, directory resolution, and flag parsing
//! shared by the subcommands.

use std::fmt;
use std::path::PathBuf;

use qst_core::dataset::{self, DatasetRecord};
use qst_core::states::Family;
use qst_core::noise::NoiseKind;
use qst_core::Error;

/// Environment variable consulted when a data-directory flag is omitted.
pub const DATA_DIR_VAR: &str = "QST_DATA_DIR";

/// Command-layer failure: either a flag combination the parser cannot
/// reject on its own, or an error bubbled up from the core library.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// Stable scripting contract: 2 usage, 3 data or generation failure,
    /// 4 numerical divergence, 5 checkpoint mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::InvalidParameter { .. })
            | CliError::Core(Error::InvalidDimension(_)) => 2,
            CliError::Core(Error::Divergence { .. }) => 4,
            CliError::Core(Error::CheckpointMismatch { .. }) => 5,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Reconstruction method selector shared by `reconstruct` and the two
/// benchmark subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Linear,
    Mle,
    GdCholesky,
    GdSplit,
    Rfb,
    Msnn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Mle => "mle",
            Method::GdCholesky => "gd-cholesky",
            Method::GdSplit => "gd-split",
            Method::Rfb => "rfb",
            Method::Msnn => "msnn",
        }
    }

    /// Neural methods need a trained checkpoint before they can run.
    pub fn is_neural(self) -> bool {
        matches!(self, Method::Rfb | Method::Msnn)
    }
}

/// Explicit flag first, then the `QST_DATA_DIR` default.
pub fn resolve_data_dir(flag: Option<PathBuf>, flag_name: &str) -> CliResult<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    if let Some(dir) = std::env::var_os(DATA_DIR_VAR) {
        return Ok(PathBuf::from(dir));
    }
    Err(CliError::Usage(format!(
        "{flag_name} not given and {DATA_DIR_VAR} is unset"
    )))
}

/// Every run prints its resolved configuration before doing any work.
pub fn print_config(command: &str, entries: &[(&str, String)]) {
    println!("resolved config [{command}]");
    for (key, value) in entries {
        println!("  {key} = {value}");
    }
}

/// Empty class list selects all seven families in canonical label order.
pub fn parse_classes(names: &[String]) -> CliResult<Vec<Family>> {
    if names.is_empty() {
        return Ok(Family::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| Family::from_name(n.trim()).map_err(CliError::from))
        .collect()
}

/// Noise flags use the `kind:level` form, e.g. `mixed:0.25` or `pepper:0.1`.
pub fn parse_noise(text: &str) -> CliResult<NoiseKind> {
    let (name, level) = text.split_once(':').ok_or_else(|| {
        CliError::Usage(format!("noise spec '{text}' is not of the form kind:level"))
    })?;
    let level: f64 = level
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("noise level '{level}' is not a number")))?;
    Ok(dataset::noise_kind_from_name(name.trim(), level)?)
}

/// Out-of-range record indices are data errors, not usage errors: the flag
/// parsed fine but the dataset cannot satisfy it.
pub fn pick_record(records: &[DatasetRecord], index: usize) -> CliResult<&DatasetRecord> {
    records.get(index).ok_or_else(|| {
        CliError::Core(Error::Inconsistency(format!(
            "record index {index} out of range: dataset holds {} records",
            records.len()
        )))
    })
}
