use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sensorgrade_core::raster::{Raster, RasterConfig};
use sensorgrade_core::scene::hours_equivalent;
use sensorgrade_core::seeding::derive_seed;
use sensorgrade_core::{Quality, Scene};

use crate::nn::{ArchSpec, Network};
use crate::train::TrainConfig;
use crate::trajectory::Trajectory;
use crate::PlannerError;

const INIT_TAG: u64 = 0x696e_6974;

/// Where a model's training data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataProvenance {
    pub quality: Quality,
    pub n_scenes: usize,
    pub hours_equivalent: f64,
    pub seed: u64,
}

impl DataProvenance {
    /// Summarizes a scene list; the quality is taken from the first scene.
    pub fn of_scenes(scenes: &[Scene], seed: u64) -> Self {
        Self {
            quality: scenes
                .first()
                .map(|s| s.provenance.quality.clone())
                .unwrap_or(Quality::AvGrade),
            n_scenes: scenes.len(),
            hours_equivalent: hours_equivalent(scenes.len()),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub learning_rate: f64,
    pub epochs: usize,
    pub data: DataProvenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub init_seed: u64,
    pub train_config: Option<TrainConfig>,
    pub train_data: Option<DataProvenance>,
    pub epoch_losses: Vec<f64>,
    pub fine_tune: Option<FineTuneRecord>,
}

/// A planner network together with the raster layout it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerModel {
    pub raster: RasterConfig,
    pub net: Network<f32>,
    pub provenance: ModelProvenance,
}

impl PlannerModel {
    pub fn new(raster: &RasterConfig, arch: &ArchSpec, seed: u64) -> Result<Self, PlannerError> {
        raster.validate()?;
        arch.validate()?;
        check_arch(raster, arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[INIT_TAG]));
        Ok(Self {
            raster: raster.clone(),
            net: Network::init(arch, &mut rng),
            provenance: ModelProvenance {
                init_seed: seed,
                ..ModelProvenance::default()
            },
        })
    }

    /// The standard architecture for `raster`, initialized from `seed`.
    pub fn standard(raster: &RasterConfig, seed: u64) -> Result<Self, PlannerError> {
        Self::new(raster, &ArchSpec::standard(raster), seed)
    }

    pub fn zeros(raster: &RasterConfig, arch: &ArchSpec) -> Result<Self, PlannerError> {
        check_arch(raster, arch)?;
        Ok(Self {
            raster: raster.clone(),
            net: Network::zeros(arch),
            provenance: ModelProvenance::default(),
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.net.arch
    }

    pub fn fingerprint(&self) -> String {
        self.net.arch.fingerprint()
    }

    pub fn is_fine_tuned(&self) -> bool {
        self.provenance.fine_tune.is_some()
    }

    pub fn forward(&self, raster: &Raster) -> Result<Trajectory, PlannerError> {
        if raster.config != self.raster {
            return Err(PlannerError::Shape {
                expected: format!("{:?}", self.raster),
                actual: format!("{:?}", raster.config),
            });
        }
        let out = self.net.forward(&raster.data)?;
        let flat: Vec<f64> = out.iter().map(|v| *v as f64).collect();
        Trajectory::from_flat(&flat)
    }
}

pub(crate) fn check_arch(raster: &RasterConfig, arch: &ArchSpec) -> Result<(), PlannerError> {
    if arch.in_channels != raster.channels() || arch.input_size != raster.size_px {
        return Err(PlannerError::Shape {
            expected: format!("{}x{}x{}", arch.in_channels, arch.input_size, arch.input_size),
            actual: format!("{}x{}x{}", raster.channels(), raster.size_px, raster.size_px),
        });
    }
    Ok(())
}
