//! Experiment runner: configuration, grids, results tables and reports.

use std::io;

use sensorgrade_core::{RasterError, SceneError, WorldError};
use sensorgrade_planner::PlannerError;

pub mod config;
pub mod experiments;
pub mod report;
pub mod results;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("results table: {0}")]
    Results(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{failed} of {total} experiment rows failed")]
    Partial { failed: usize, total: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

impl CliError {
    /// 1 for validation and runtime errors, 2 when an experiment finished
    /// with some failed rows.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Partial { .. } => 2,
            _ => 1,
        }
    }
}
