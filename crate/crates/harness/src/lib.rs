//! Synthetic-scene harness for `groupsplat-core`: scene generation,
//! degradations, file formats, the end-to-end pipeline and the CLI.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod degrade;
pub mod io;
pub mod pipeline;
pub mod settings;
pub mod synth;

use std::path::PathBuf;

use groupsplat_core::cluster::ClusterError;
use groupsplat_core::correction::CorrectionError;
use groupsplat_core::grouping::GroupingError;
use groupsplat_core::metrics::MetricsError;
use groupsplat_core::render::RenderError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for everything
    /// that goes wrong with the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
