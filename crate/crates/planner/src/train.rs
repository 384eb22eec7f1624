//! Mini-batch training with the adaptive-moment optimizer.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sensorgrade_core::seeding::{self, derive_seed};
use sensorgrade_core::Scene;

use crate::adam::{Adam, AdamParams};
use crate::data::{build_sample, enumerate_samples, SampleRef};
use crate::model::{DataProvenance, FineTuneRecord, PlannerModel};
use crate::nn::Cache;
use crate::perturb::PerturbParams;
use crate::trajectory::loss_and_grad;
use crate::PlannerError;

pub const FINE_TUNE_EPOCHS: usize = 2;
pub const FINE_TUNE_LR_FACTOR: f64 = 0.1;

const SHUFFLE_TAG: u64 = 0x7368_7566;
const PERTURB_TAG: u64 = 0x7074_7262;
const FINE_TUNE_TAG: u64 = 0x6674_756e;

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub perturb: PerturbParams,
    pub seed: u64,
    /// Use every `sample_stride`-th valid frame of each scene.
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-4,
            adam: AdamParams::default(),
            perturb: PerturbParams::default(),
            seed: 0,
            sample_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.epochs == 0 {
            return Err(PlannerError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PlannerError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PlannerError::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.sample_stride == 0 {
            return Err(PlannerError::Config("sample_stride must be >= 1".into()));
        }
        self.perturb.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub n_samples: usize,
    pub learning_rate: f64,
}

/// Loss and parameter gradient of one sample.
fn sample_gradient(
    model: &PlannerModel,
    scenes: &[Scene],
    sample: SampleRef,
    perturb: &PerturbParams,
    rng_seed: u64,
) -> Result<(f64, Vec<f32>), PlannerError> {
    let mut rng = seeding::stream(rng_seed, &[]);
    let scene = &scenes[sample.scene];
    let (raster, target) = build_sample(scene, sample.frame, &model.raster, Some(perturb), &mut rng)?;
    let mut cache = Cache::default();
    let out = model.net.forward_cached(&raster.data, &mut cache)?;
    let pred: Vec<f64> = out.iter().map(|v| *v as f64).collect();
    let (loss, d_out) = loss_and_grad(&pred, &target.to_flat());
    if !loss.is_finite() {
        return Err(PlannerError::NonFinite(format!(
            "loss at scene {} frame {}",
            scene.scene_id, sample.frame
        )));
    }
    let d_out: Vec<f32> = d_out.iter().map(|v| *v as f32).collect();
    let mut grads = vec![0.0f32; model.net.params.len()];
    model.net.backward(&cache, &d_out, &mut grads);
    Ok((loss, grads))
}

/// Runs `epochs` epochs of mini-batch training on `model` in place, with a
/// fresh optimizer. Per-sample work may run in parallel; gradients are summed
/// in sample order so results do not depend on the thread count.
pub fn fit(
    model: &mut PlannerModel,
    scenes: &[Scene],
    cfg: &TrainConfig,
    epochs: usize,
    learning_rate: f64,
    stream_seed: u64,
) -> Result<TrainReport, PlannerError> {
    cfg.validate()?;
    let samples = enumerate_samples(scenes, model.raster.history_frames, cfg.sample_stride);
    if samples.is_empty() {
        return Err(PlannerError::EmptySamples);
    }
    let mut opt = Adam::new(model.net.params.len(), learning_rate, cfg.adam.clone());
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..epochs {
        let mut rng = seeding::stream(stream_seed, &[SHUFFLE_TAG, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Vec<f32>), PlannerError>> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(stream_seed, &[PERTURB_TAG, epoch as u64, i as u64]);
                    sample_gradient(model, scenes, samples[i], &cfg.perturb, seed)
                })
                .collect();
            let mut sum = vec![0.0f32; model.net.params.len()];
            for r in results {
                let (loss, g) = r?;
                total += loss;
                for (s, v) in sum.iter_mut().zip(&g) {
                    *s += *v;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for s in &mut sum {
                *s *= inv;
            }
            opt.step(&mut model.net.params, &sum);
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    Ok(TrainReport {
        epoch_losses,
        n_samples: samples.len(),
        learning_rate,
    })
}

/// Trains a freshly initialized standard model.
pub fn train(
    scenes: &[Scene],
    data: DataProvenance,
    raster: &sensorgrade_core::raster::RasterConfig,
    cfg: &TrainConfig,
) -> Result<(PlannerModel, TrainReport), PlannerError> {
    cfg.validate()?;
    let mut model = PlannerModel::standard(raster, cfg.seed)?;
    let report = fit(&mut model, scenes, cfg, cfg.epochs, cfg.learning_rate, cfg.seed)?;
    model.provenance.train_config = Some(cfg.clone());
    model.provenance.train_data = Some(data);
    model.provenance.epoch_losses = report.epoch_losses.clone();
    Ok((model, report))
}

/// Continues training for exactly two epochs at a tenth of the base learning
/// rate with a fresh optimizer state.
pub fn fine_tune(
    model: &PlannerModel,
    scenes: &[Scene],
    data: DataProvenance,
    base: &TrainConfig,
) -> Result<(PlannerModel, TrainReport), PlannerError> {
    let mut tuned = model.clone();
    let lr = base.learning_rate * FINE_TUNE_LR_FACTOR;
    let seed = derive_seed(base.seed, &[FINE_TUNE_TAG]);
    let report = fit(&mut tuned, scenes, base, FINE_TUNE_EPOCHS, lr, seed)?;
    tuned.provenance.fine_tune = Some(FineTuneRecord {
        learning_rate: lr,
        epochs: FINE_TUNE_EPOCHS,
        data,
    });
    Ok((tuned, report))
}

/// Mean unperturbed loss over every `stride`-th sample of `scenes`.
pub fn mean_loss(model: &PlannerModel, scenes: &[Scene], stride: usize) -> Result<f64, PlannerError> {
    let samples = enumerate_samples(scenes, model.raster.history_frames, stride);
    if samples.is_empty() {
        return Err(PlannerError::EmptySamples);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let scene = &scenes[s.scene];
            let mut rng = seeding::stream(0, &[]);
            let (raster, target) = build_sample(scene, s.frame, &model.raster, None, &mut rng)?;
            Ok(crate::trajectory::loss(&model.forward(&raster)?, &target))
        })
        .collect::<Result<_, PlannerError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
