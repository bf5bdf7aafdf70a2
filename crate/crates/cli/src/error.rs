use std::io;
use std::path::PathBuf;

use pim_enclave::dma::DmaError;
use pim_enclave::host::HostError;
use pim_enclave::workloads::hashtable::HashError;
use pim_enclave::workloads::kmeans::KMeansError;
use thiserror::Error;

use crate::config::ConfigFileError;
use crate::peds::PedsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Peds(#[from] PedsError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::KMeans(_) => "kmeans",
            CliError::Hash(_) => "hashtable",
            CliError::Dma(_) => "dma",
            CliError::Host(_) => "host",
            CliError::Peds(_) => "dataset",
            CliError::Usage(_) => "usage",
        }
    }

    /// One `key=value` line for scripts; the message is a quoted,
    /// escaped string.
    pub fn machine_line(&self) -> String {
        let key = match self {
            CliError::Config(e) => e.key().map(|k| format!(" key={k}")),
            _ => None,
        };
        format!(
            "error kind={}{} message={:?}",
            self.kind(),
            key.unwrap_or_default(),
            self.to_string()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn machine_line_is_one_line() {
        let e = CliError::Config(crate::config::parse("n_banks = 0").unwrap_err());
        let line = e.machine_line();
        assert!(line.starts_with("error kind=config key=n_banks message=\""), "{line}");
        let e = CliError::Config(crate::config::parse("n_banks = \"x\"").unwrap_err());
        assert!(!e.machine_line().contains('\n'));
    }
}
