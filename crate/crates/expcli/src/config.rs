//! The single JSON document configuring every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sensorgrade_core::raster::RasterConfig;
use sensorgrade_core::world::{ExpertParams, WorldSpec};
use sensorgrade_core::{DegradationConfig, SensorRange};
use sensorgrade_planner::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    /// Seed of the generated train/test splits.
    pub seed: u64,
    pub world: WorldSpec,
    pub expert: ExpertParams,
    pub raster: RasterConfig,
    pub train: TrainConfig,
    pub data: DataSizes,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    pub quantity: QuantityConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldSpec::default(),
            expert: ExpertParams::default(),
            raster: RasterConfig::default(),
            train: TrainConfig::default(),
            data: DataSizes::default(),
            eval: EvalConfig::default(),
            grid: GridConfig::default(),
            quantity: QuantityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSizes {
    /// Scene count of the 1x training level.
    pub train_scenes: usize,
    pub test_scenes: usize,
}

impl Default for DataSizes {
    fn default() -> Self {
        Self {
            train_scenes: 36,
            test_scenes: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate open-loop ADE at every n-th valid frame.
    pub ade_frame_stride: usize,
    pub deviation_limit_m: f64,
    pub influence_frame_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ade_frame_stride: 1,
            deviation_limit_m: sensorgrade_planner::eval::DEFAULT_DEVIATION_LIMIT_M,
            influence_frame_stride: 1,
        }
    }
}

/// Where fine-tuning data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneSource {
    /// The clean 1x training split.
    TrainSplit,
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub ranges: Vec<SensorRange>,
    pub fovs_deg: Vec<f64>,
    /// Accuracy sweep, run at full range and 360 degrees.
    pub target_ious: Vec<f64>,
    pub rot_deg: Vec<f64>,
    /// Multiples of `data.train_scenes`.
    pub hours: Vec<usize>,
    pub fine_tune: Option<FineTuneSource>,
    pub seeds: Vec<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            ranges: vec![
                SensorRange::Meters(20.0),
                SensorRange::Meters(40.0),
                SensorRange::Meters(60.0),
                SensorRange::Unlimited,
            ],
            fovs_deg: vec![70.0, 130.0, 270.0, 360.0],
            target_ious: vec![0.1, 1.0],
            rot_deg: vec![30.0, 0.0],
            hours: vec![1],
            fine_tune: None,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantityConfig {
    pub multiplier: usize,
    /// Quality levels of the large degraded corpus.
    pub cells: Vec<QualityCell>,
    pub fine_tune: bool,
    pub seeds: Vec<u64>,
}

impl Default for QuantityConfig {
    fn default() -> Self {
        Self {
            multiplier: 10,
            cells: vec![QualityCell {
                range_m: SensorRange::Meters(40.0),
                fov_deg: 130.0,
                ..QualityCell::av_grade()
            }],
            fine_tune: true,
            seeds: vec![0, 1, 2],
        }
    }
}

/// One simulated sensor grade; the degradation seed comes from the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityCell {
    pub range_m: SensorRange,
    pub fov_deg: f64,
    pub target_iou: f64,
    pub rot_deg: f64,
}

impl QualityCell {
    pub fn av_grade() -> Self {
        Self {
            range_m: SensorRange::Unlimited,
            fov_deg: 360.0,
            target_iou: 1.0,
            rot_deg: 0.0,
        }
    }

    pub fn degradation(&self, seed: u64) -> DegradationConfig {
        DegradationConfig::av_grade()
            .with_range(self.range_m)
            .with_fov(self.fov_deg)
            .with_accuracy(self.target_iou, self.rot_deg.to_radians())
            .with_seed(seed)
    }

    pub fn is_av_grade(&self) -> bool {
        self.degradation(0).is_identity()
    }

    pub fn label(&self) -> String {
        if self.is_av_grade() {
            return "av-grade".into();
        }
        format!(
            "range {} / fov {} / iou {} / rot {}",
            self.range_m, self.fov_deg, self.target_iou, self.rot_deg
        )
    }
}

fn invalid(detail: String) -> CliError {
    CliError::Config(detail)
}

impl GridConfig {
    /// Range x FoV cells at full accuracy, then the accuracy sweep at full
    /// range and FoV (skipping the AV-grade cell already listed).
    pub fn cells(&self) -> Vec<QualityCell> {
        let mut cells = Vec::new();
        for &range_m in &self.ranges {
            for &fov_deg in &self.fovs_deg {
                cells.push(QualityCell {
                    range_m,
                    fov_deg,
                    ..QualityCell::av_grade()
                });
            }
        }
        for &target_iou in &self.target_ious {
            for &rot_deg in &self.rot_deg {
                let c = QualityCell {
                    target_iou,
                    rot_deg,
                    ..QualityCell::av_grade()
                };
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
        }
        cells
    }
}

fn check_seeds(what: &str, seeds: &[u64]) -> Result<(), CliError> {
    if seeds.is_empty() {
        return Err(invalid(format!("{what}.seeds must not be empty")));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid(format!("{what}.seeds must be distinct")));
    }
    Ok(())
}

impl LabConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: LabConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| invalid(format!("{}: {} (at `{}`)", path.display(), e.inner(), e.path())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| invalid(e.to_string()))?;
        self.expert.validate().map_err(|e| invalid(e.to_string()))?;
        self.raster.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        if self.data.train_scenes == 0 || self.data.test_scenes == 0 {
            return Err(invalid("data.train_scenes and data.test_scenes must be >= 1".into()));
        }
        if self.eval.ade_frame_stride == 0 || self.eval.influence_frame_stride == 0 {
            return Err(invalid("eval frame strides must be >= 1".into()));
        }
        if !(self.eval.deviation_limit_m > 0.0) {
            return Err(invalid("eval.deviation_limit_m must be > 0".into()));
        }
        let g = &self.grid;
        if g.ranges.is_empty() || g.fovs_deg.is_empty() || g.target_ious.is_empty() || g.rot_deg.is_empty() {
            return Err(invalid("grid bucket lists must not be empty".into()));
        }
        if g.hours.is_empty() || g.hours.contains(&0) {
            return Err(invalid("grid.hours must be non-empty multiples >= 1".into()));
        }
        check_seeds("grid", &g.seeds)?;
        check_seeds("quantity", &self.quantity.seeds)?;
        if self.quantity.multiplier == 0 {
            return Err(invalid("quantity.multiplier must be >= 1".into()));
        }
        for c in g.cells().iter().chain(&self.quantity.cells) {
            c.degradation(0).validate().map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }
}
