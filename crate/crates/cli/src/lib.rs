//! Command-line harness: config parsing, price runs, property checks and a
//! scaling benchmark.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use utilprice::UtilityDomainError;

pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig, DEFAULT_SLICE};
pub use run::{run_bench, run_check, run_price, BenchRow, CheckOutcome, PriceRun};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("utility domain violation: {0}")]
    Domain(UtilityDomainError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 config, 3 numerical failure, 4 utility-domain violation, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Numerical(_) => 3,
            Self::Domain(_) => 4,
            Self::Io { .. } => 1,
        }
    }
}

impl From<utilprice::Error> for CliError {
    fn from(e: utilprice::Error) -> Self {
        use utilprice::Error as E;
        match e {
            E::UtilityDomain(d) => Self::Domain(d),
            E::Parameter(m) | E::Config(m) => Self::Config { line: None, message: m },
            E::Index(m) | E::Contract(m) | E::Numerical(m) => Self::Numerical(m),
        }
    }
}

impl From<UtilityDomainError> for CliError {
    fn from(e: UtilityDomainError) -> Self {
        Self::Domain(e)
    }
}
