//! Scene model, synthetic expert world, perception degradation and
//! bird's-eye-view rasterization.

use std::path::Path;

use thiserror::Error;

pub mod degrade;
pub mod geometry;
pub mod io;
pub mod polyline;
pub mod raster;
pub mod scene;
pub mod seeding;
pub mod world;

pub use degrade::{degrade, DegradationConfig, SensorRange};
pub use geometry::{boxes_overlap, iou_same_size, normalize_angle, OrientedBox, Pose2D, Vec2};
pub use scene::{AgentClass, AgentId, AgentObservation, DatasetManifest, Frame, Provenance, Quality, Scene, SemanticMap};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("invariant `{invariant}` violated: {detail}")]
    Invariant { invariant: &'static str, detail: String },
    #[error("invalid {what}: {detail}")]
    Config { what: &'static str, detail: String },
}

impl SceneError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        SceneError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid raster config: {0}")]
    Config(String),
    #[error("frame {index} needs {history} history frames")]
    InsufficientHistory { index: usize, history: usize },
    #[error("frame {index} out of range for scene with {len} frames")]
    FrameOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
