//! Raster-input CNN planner: model, training, checkpoints and evaluation.

use std::io;

use sensorgrade_core::{RasterError, SceneError};

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod model;
pub mod nn;
pub mod perturb;
pub mod scalar;
pub mod train;
pub mod trajectory;

pub use checkpoint::{load_model, load_model_for, save_model};
pub use eval::{
    agent_influence, closed_loop, closed_loop_all, collision_rate, influence_histogram, open_loop_ade,
    ExpertReplay, InfluenceClass, Policy, RolloutResult, Termination,
};
pub use model::{DataProvenance, PlannerModel};
pub use nn::{ArchSpec, Network};
pub use perturb::PerturbParams;
pub use train::{fine_tune, train, TrainConfig, TrainReport};
pub use trajectory::{Trajectory, HORIZON};

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no training or evaluation samples")]
    EmptySamples,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint: expected architecture {expected}, found {found}")]
    Incompatible { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
