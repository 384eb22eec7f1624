//! Train/test splits and the grid, quantity and influence experiments.

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use sensorgrade_core::io::{load_manifest, load_manifest_scenes};
use sensorgrade_core::scene::hours_equivalent;
use sensorgrade_core::seeding::derive_seed;
use sensorgrade_core::world::generate_scenes;
use sensorgrade_core::{degrade, Scene};
use sensorgrade_planner::eval::{
    closed_loop_all, collision_rate, influence_histogram, open_loop_ade, Bucket, InfluenceHistogram, Termination,
    DISTANCE_BIN_M,
};
use sensorgrade_planner::{fine_tune, train, DataProvenance, PlannerError, PlannerModel, TrainConfig};

use crate::config::{FineTuneSource, LabConfig, QualityCell};
use crate::results::{ResultRow, RowStatus, TableWriter};
use crate::CliError;

const TRAIN_SPLIT_TAG: u64 = 0x7472_6169;
const TEST_SPLIT_TAG: u64 = 0x7465_7374;
const DEGRADE_TAG: u64 = 0x6467_7264;

/// Held-out test scenes and the training pool shared by every cell.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
    pub data_seed: u64,
}

impl Splits {
    /// Generates `train_scenes * max_multiplier` training scenes; the 1x
    /// level is a prefix of every larger level.
    pub fn generate(cfg: &LabConfig, max_multiplier: usize) -> Result<Self, CliError> {
        let n = cfg.data.train_scenes * max_multiplier;
        let train = generate_scenes(&cfg.world, &cfg.expert, n, derive_seed(cfg.seed, &[TRAIN_SPLIT_TAG]))?;
        let test = generate_scenes(
            &cfg.world,
            &cfg.expert,
            cfg.data.test_scenes,
            derive_seed(cfg.seed, &[TEST_SPLIT_TAG]),
        )?;
        Ok(Self {
            train,
            test,
            data_seed: cfg.seed,
        })
    }

    pub fn load(train_manifest: &Path, test_manifest: &Path) -> Result<Self, CliError> {
        let train_m = load_manifest(train_manifest)?;
        let train = load_manifest_scenes(&train_m, manifest_dir(train_manifest))?;
        let test_m = load_manifest(test_manifest)?;
        let test = load_manifest_scenes(&test_m, manifest_dir(test_manifest))?;
        let train_ids: std::collections::HashSet<&str> = train.iter().map(|s| s.scene_id.as_str()).collect();
        if let Some(s) = test.iter().find(|s| train_ids.contains(s.scene_id.as_str())) {
            return Err(CliError::Config(format!("scene {} is in both train and test manifests", s.scene_id)));
        }
        Ok(Self {
            train,
            test,
            data_seed: train_m.seed,
        })
    }

    fn train_level(&self, cfg: &LabConfig, multiplier: usize) -> Result<&[Scene], CliError> {
        let n = cfg.data.train_scenes * multiplier;
        if self.train.len() < n {
            return Err(CliError::Config(format!(
                "{multiplier}x needs {n} training scenes, only {} available",
                self.train.len()
            )));
        }
        Ok(&self.train[..n])
    }
}

pub fn manifest_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

/// Loads every scene of a manifest.
pub fn load_scenes(manifest: &Path) -> Result<Vec<Scene>, CliError> {
    let m = load_manifest(manifest)?;
    Ok(load_manifest_scenes(&m, manifest_dir(manifest))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub ade_m: f64,
    pub collision_rate: f64,
    pub n_steps: usize,
    pub n_collisions: usize,
    pub n_completed: usize,
    pub n_deviations: usize,
}

/// Open-loop ADE and closed-loop rollouts on the test scenes.
pub fn evaluate(model: &PlannerModel, test: &[Scene], cfg: &LabConfig) -> Result<Metrics, PlannerError> {
    let ade = open_loop_ade(model, test, cfg.eval.ade_frame_stride)?;
    let rollouts = closed_loop_all(model, test, cfg.eval.deviation_limit_m)?;
    let summary = collision_rate(&rollouts)?;
    let count = |t: Termination| rollouts.iter().filter(|r| r.termination == t).count();
    Ok(Metrics {
        ade_m: ade.ade_m,
        collision_rate: summary.rate,
        n_steps: summary.n_steps,
        n_collisions: summary.n_collisions,
        n_completed: count(Termination::Completed),
        n_deviations: count(Termination::Deviation),
    })
}

/// Degrades every scene with one derived seed per run.
pub fn degrade_all(scenes: &[Scene], cell: &QualityCell, seed: u64) -> Result<Vec<Scene>, CliError> {
    let config = cell.degradation(derive_seed(seed, &[DEGRADE_TAG]));
    Ok(scenes
        .par_iter()
        .map(|s| degrade(s, &config))
        .collect::<Result<_, _>>()?)
}

/// One training run, optionally followed by fine-tuning; yields one or two rows.
#[derive(Debug, Clone)]
pub struct Job {
    pub experiment: &'static str,
    pub cell: QualityCell,
    pub multiplier: usize,
    pub seed: u64,
    pub fine_tune: bool,
}

#[derive(Serialize)]
struct RowIdentity<'a> {
    experiment: &'a str,
    cell: &'a QualityCell,
    train_ids: String,
    test_ids: String,
    fine_tune_ids: Option<String>,
    seed: u64,
    data_seed: u64,
    raster: &'a sensorgrade_core::raster::RasterConfig,
    train: &'a TrainConfig,
    eval: &'a crate::config::EvalConfig,
}

fn ids_digest(scenes: &[Scene]) -> String {
    let mut h = Sha256::new();
    for s in scenes {
        h.update(s.scene_id.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize()[..8])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything that determines the experiment context of a run.
pub struct Context<'a> {
    pub cfg: &'a LabConfig,
    pub splits: &'a Splits,
    pub fine_tune_scenes: Option<&'a [Scene]>,
}

impl Context<'_> {
    fn row_key(&self, job: &Job, train: &[Scene], fine_tuned: bool) -> String {
        let id = RowIdentity {
            experiment: job.experiment,
            cell: &job.cell,
            train_ids: ids_digest(train),
            test_ids: ids_digest(&self.splits.test),
            fine_tune_ids: fine_tuned.then(|| ids_digest(self.fine_tune_scenes.unwrap_or_default())),
            seed: job.seed,
            data_seed: self.splits.data_seed,
            raster: &self.cfg.raster,
            train: &self.cfg.train,
            eval: &self.cfg.eval,
        };
        let json = serde_json::to_vec(&id).expect("row identity serializes");
        hex(&Sha256::digest(&json)[..8])
    }

    fn row(&self, job: &Job, n_train: usize, fine_tuned: bool, key: String) -> ResultRow {
        ResultRow {
            experiment: job.experiment.to_string(),
            row_key: key,
            range: job.cell.range_m.to_string(),
            fov: job.cell.fov_deg,
            iou: job.cell.target_iou,
            rot: job.cell.rot_deg,
            hours_equiv: hours_equivalent(n_train),
            n_train_scenes: n_train,
            fine_tuned,
            seed: job.seed,
            data_seed: self.splits.data_seed,
            ade_m: None,
            collision_rate: None,
            n_steps: None,
            n_collisions: None,
            n_completed: None,
            n_deviations: None,
            status: RowStatus::Failed,
            error: String::new(),
            wall_time_s: 0.0,
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.cfg.train.clone()
        }
    }

    /// Trains (and evaluates) one cell. Failures become failed rows rather
    /// than errors so that the remaining cells still run.
    pub fn run_job(&self, job: &Job, skip: &dyn Fn(&str) -> bool) -> Vec<ResultRow> {
        let train_scenes = match self.splits.train_level(self.cfg, job.multiplier) {
            Ok(s) => s,
            Err(e) => {
                let mut r = self.row(job, 0, false, String::new());
                r.error = e.to_string();
                return vec![r];
            }
        };
        let n = train_scenes.len();
        let base_key = self.row_key(job, train_scenes, false);
        let ft_key = job.fine_tune.then(|| self.row_key(job, train_scenes, true));
        if skip(&base_key) && ft_key.as_deref().is_none_or(skip) {
            return Vec::new();
        }
        let mut rows = Vec::new();
        let start = Instant::now();
        let trained = degrade_all(train_scenes, &job.cell, job.seed).and_then(|data| {
            let cfg = self.train_config(job.seed);
            let (model, _) = train(&data, DataProvenance::of_scenes(&data, self.splits.data_seed), &self.cfg.raster, &cfg)?;
            Ok((model, cfg))
        });
        let (model, cfg) = match trained {
            Ok(v) => v,
            Err(e) => {
                let mut r = self.row(job, n, false, base_key);
                r.error = e.to_string();
                r.wall_time_s = start.elapsed().as_secs_f64();
                rows.push(r);
                if let Some(k) = ft_key {
                    let mut r = self.row(job, n, true, k);
                    r.error = "base training failed".into();
                    rows.push(r);
                }
                return rows;
            }
        };
        if !skip(&base_key) {
            let row = self.row(job, n, false, base_key);
            rows.push(finish(row, evaluate(&model, &self.splits.test, self.cfg), start));
        }
        if let Some(key) = ft_key {
            let start = Instant::now();
            let row = self.row(job, n, true, key);
            let scenes = self.fine_tune_scenes.unwrap_or_default();
            let metrics = fine_tune(&model, scenes, DataProvenance::of_scenes(scenes, self.splits.data_seed), &cfg)
                .and_then(|(tuned, _)| evaluate(&tuned, &self.splits.test, self.cfg));
            rows.push(finish(row, metrics, start));
        }
        rows
    }
}

fn finish(mut row: ResultRow, metrics: Result<Metrics, PlannerError>, start: Instant) -> ResultRow {
    match metrics {
        Ok(m) => {
            row.ade_m = Some(m.ade_m);
            row.collision_rate = Some(m.collision_rate);
            row.n_steps = Some(m.n_steps);
            row.n_collisions = Some(m.n_collisions);
            row.n_completed = Some(m.n_completed);
            row.n_deviations = Some(m.n_deviations);
            row.status = RowStatus::Ok;
        }
        Err(e) => row.error = e.to_string(),
    }
    row.wall_time_s = start.elapsed().as_secs_f64();
    row
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub written: usize,
    pub failed: usize,
    pub skipped_jobs: usize,
}

/// Runs jobs (in parallel unless `sequential`), appending rows as they
/// finish. Sequential runs write rows in job order.
pub fn run_jobs(
    ctx: &Context,
    jobs: &[Job],
    writer: &mut TableWriter,
    done: &std::collections::HashSet<String>,
    sequential: bool,
) -> Result<RunSummary, CliError> {
    let writer = Mutex::new((writer, RunSummary::default(), None::<CliError>));
    let skip = |k: &str| done.contains(k);
    let work = |job: &Job| {
        let rows = ctx.run_job(job, &skip);
        let mut guard = writer.lock().expect("writer lock");
        let (w, summary, err) = &mut *guard;
        if rows.is_empty() {
            summary.skipped_jobs += 1;
        }
        for r in rows {
            if r.status == RowStatus::Failed {
                summary.failed += 1;
            }
            match w.append(&r) {
                Ok(()) => summary.written += 1,
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        }
    };
    if sequential {
        jobs.iter().for_each(work);
    } else {
        jobs.par_iter().for_each(work);
    }
    let (_, summary, err) = writer.into_inner().expect("writer lock");
    match err {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

pub fn grid_jobs(cfg: &LabConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &multiplier in &cfg.grid.hours {
        for cell in cfg.grid.cells() {
            for &seed in &cfg.grid.seeds {
                jobs.push(Job {
                    experiment: "grid",
                    cell,
                    multiplier,
                    seed,
                    fine_tune: cfg.grid.fine_tune.is_some() && !cell.is_av_grade(),
                });
            }
        }
    }
    jobs
}

/// The clean 1x baseline, then each degraded cell at the large multiplier
/// (fine-tuned on the clean 1x split when enabled).
pub fn quantity_jobs(cfg: &LabConfig) -> Vec<Job> {
    let q = &cfg.quantity;
    let mut jobs: Vec<Job> = q
        .seeds
        .iter()
        .map(|&seed| Job {
            experiment: "quantity",
            cell: QualityCell::av_grade(),
            multiplier: 1,
            seed,
            fine_tune: false,
        })
        .collect();
    for cell in &q.cells {
        for &seed in &q.seeds {
            jobs.push(Job {
                experiment: "quantity",
                cell: *cell,
                multiplier: q.multiplier,
                seed,
                fine_tune: q.fine_tune,
            });
        }
    }
    jobs
}

/// Scenes used for fine-tuning in the grid.
pub fn grid_fine_tune_scenes(cfg: &LabConfig, splits: &Splits) -> Result<Option<Vec<Scene>>, CliError> {
    match &cfg.grid.fine_tune {
        None => Ok(None),
        Some(FineTuneSource::TrainSplit) => Ok(Some(splits.train_level(cfg, 1)?.to_vec())),
        Some(FineTuneSource::Manifest(p)) => Ok(Some(load_scenes(p)?)),
    }
}

pub fn run_grid(
    cfg: &LabConfig,
    splits: &Splits,
    writer: &mut TableWriter,
    done: &std::collections::HashSet<String>,
    sequential: bool,
) -> Result<RunSummary, CliError> {
    let ft = grid_fine_tune_scenes(cfg, splits)?;
    let ctx = Context {
        cfg,
        splits,
        fine_tune_scenes: ft.as_deref(),
    };
    run_jobs(&ctx, &grid_jobs(cfg), writer, done, sequential)
}

pub fn run_quantity(
    cfg: &LabConfig,
    splits: &Splits,
    writer: &mut TableWriter,
    done: &std::collections::HashSet<String>,
    sequential: bool,
) -> Result<RunSummary, CliError> {
    let clean = splits.train_level(cfg, 1)?;
    let ctx = Context {
        cfg,
        splits,
        fine_tune_scenes: Some(clean),
    };
    run_jobs(&ctx, &quantity_jobs(cfg), writer, done, sequential)
}

pub const SECTOR_NAMES: [&str; 8] = [
    "front",
    "front-left",
    "left",
    "rear-left",
    "rear",
    "rear-right",
    "right",
    "front-right",
];

pub fn run_influence(model: &PlannerModel, scenes: &[Scene], cfg: &LabConfig) -> Result<InfluenceHistogram, CliError> {
    Ok(influence_histogram(model, scenes, cfg.eval.influence_frame_stride)?)
}

fn fraction(v: Option<f64>) -> String {
    v.map(|f| f.to_string()).unwrap_or_default()
}

/// One line per bucket; empty fraction fields mark buckets with no
/// observed agents.
pub fn histogram_csv(h: &InfluenceHistogram) -> String {
    let mut out = String::from("kind,bucket,observed,very,slight,very_fraction,slight_fraction\n");
    let mut line = |kind: &str, label: String, b: &Bucket| {
        out.push_str(&format!(
            "{kind},{label},{},{},{},{},{}\n",
            b.observed,
            b.very,
            b.slight,
            fraction(b.very_fraction()),
            fraction(b.slight_fraction())
        ));
    };
    for (i, b) in h.distance.iter().enumerate() {
        let lo = i as f64 * DISTANCE_BIN_M;
        line("distance", format!("{lo}-{}m", lo + DISTANCE_BIN_M), b);
    }
    for (i, b) in h.sectors.iter().enumerate() {
        line("sector", SECTOR_NAMES[i].to_string(), b);
    }
    out
}

pub fn write_histogram(h: &InfluenceHistogram, path: &Path) -> Result<(), CliError> {
    fs::write(path, histogram_csv(h)).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Share of very-influential pairs within `radius_m` (bins fully inside).
pub fn very_share_within(h: &InfluenceHistogram, radius_m: f64) -> Option<f64> {
    let total: usize = h.records.iter().filter(|r| r.class == sensorgrade_planner::InfluenceClass::Very).count();
    if total == 0 {
        return None;
    }
    let near = h
        .records
        .iter()
        .filter(|r| r.class == sensorgrade_planner::InfluenceClass::Very && r.distance_m.is_some_and(|d| d <= radius_m))
        .count();
    Some(near as f64 / total as f64)
}
