//! File-level front end for `envdiag`: load a CSV, fit, run envelope
//! diagnostics or a power study, and write SVG plots, CSV tables and a JSON
//! manifest.

pub mod commands;
pub mod config;
pub mod data;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run_diagnose, run_fit, run_power_study, FitSummary, PlotArtifact};
pub use config::{PowerStudyConfig, RunConfig};
pub use data::load_csv;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },

    #[error("{path}: no column named {column:?}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}, column {column:?}: {value:?} is not a finite number")]
    NonNumericCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] envdiag::Error),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
    let path = path.into();
    move |source| AppError::Io { path, source }
}
