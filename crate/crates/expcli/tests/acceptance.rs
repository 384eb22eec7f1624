//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Set `SENSORGRADE_ACCEPTANCE=6,10` to run a
//! subset.

use std::fs;
use std::io::Write;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sensorgrade_cli::config::{LabConfig, QualityCell};
use sensorgrade_cli::experiments::{degrade_all, very_share_within, Splits};
use sensorgrade_cli::results::{read_table, ResultRow, RowStatus, TableWriter};
use sensorgrade_core::degrade::{iou_offsets, max_longitudinal_offset};
use sensorgrade_core::io::scene_to_string;
use sensorgrade_core::raster::RasterConfig;
use sensorgrade_core::{boxes_overlap, degrade, iou_same_size, DegradationConfig, OrientedBox, Pose2D, Scene, SensorRange, Vec2};
use sensorgrade_planner::eval::{
    closed_loop_all, collision_rate, influence_histogram, open_loop_ade, ExpertReplay, InfluenceClass, RolloutResult,
    Termination, DEFAULT_DEVIATION_LIMIT_M,
};
use sensorgrade_planner::nn::{ArchSpec, Cache, Network};
use sensorgrade_planner::trajectory::loss_and_grad;
use sensorgrade_planner::{fine_tune, train, DataProvenance, PlannerModel, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
/// Open-loop ADE is taken at every 5th valid frame of the 24 test scenes.
const ADE_STRIDE: usize = 5;
/// Training frame strides of the trend experiments.
const RANGE_STRIDE: usize = 10;
const QUANTITY_STRIDE: usize = 25;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

// Criterion 1 --------------------------------------------------------------

fn reduced_arch() -> ArchSpec {
    ArchSpec {
        in_channels: 8,
        input_size: 32,
        conv_widths: vec![4, 6, 8, 8, 8],
        hidden: 16,
        outputs: 24,
        output_scale: 4.0,
    }
}

fn fd_loss(net: &Network<f64>, input: &[f64], target: &[f64]) -> (f64, Vec<bool>) {
    let mut cache = Cache::default();
    let out = net.forward_cached(input, &mut cache).unwrap();
    (loss_and_grad(&out, target).0, cache.activation_signature())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let arch = reduced_arch();
    let mut net = Network::<f64>::init(&arch, &mut rng);
    for p in net.params.iter_mut() {
        if *p == 0.0 {
            *p = rng.random_range(0.05..0.2);
        }
    }
    let input: Vec<f64> = (0..arch.input_len())
        .map(|_| if rng.random::<f64>() < 0.25 { 1.0 } else { 0.0 })
        .collect();
    let target: Vec<f64> = (0..24).map(|i| 20.0 + i as f64 + rng.random::<f64>()).collect();

    let mut cache = Cache::default();
    let out = net.forward_cached(&input, &mut cache).unwrap();
    let (_, d_out) = loss_and_grad(&out, &target);
    let mut grads = vec![0.0; net.params.len()];
    net.backward(&cache, &d_out, &mut grads);
    let base_sig = cache.activation_signature();

    let h = 1e-3;
    let (mut worst, mut kinked) = (0.0f64, 0usize);
    for i in 0..net.params.len() {
        let orig = net.params[i];
        net.params[i] = orig + h;
        let (lp, sp) = fd_loss(&net, &input, &target);
        net.params[i] = orig - h;
        let (lm, sm) = fd_loss(&net, &input, &target);
        net.params[i] = orig;
        // A ReLU switching state inside the stencil makes the difference
        // quotient meaningless for that parameter.
        if sp != base_sig || sm != base_sig {
            kinked += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let denom = grads[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grads[i] - numeric).abs() / denom);
    }
    let elapsed = start.elapsed();
    let checked = net.params.len() - kinked;
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(60) && checked * 10 > net.params.len() * 9,
        format!(
            "max relative error {worst:.2e} over {checked} parameters ({kinked} at kinks), {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

// Criterion 2 --------------------------------------------------------------

/// Pixel-count IoU of two aligned boxes at pixel size `h`; separable per axis.
fn pixel_iou(length: f64, width: f64, dx: f64, dy: f64, h: f64) -> f64 {
    let count = |lo: f64, hi: f64| -> f64 {
        let first = (lo / h - 0.5).ceil();
        let last = (hi / h - 0.5).floor();
        (last - first + 1.0).max(0.0)
    };
    let a = count(-0.5 * length, 0.5 * length) * count(-0.5 * width, 0.5 * width);
    let b = count(dx - 0.5 * length, dx + 0.5 * length) * count(dy - 0.5 * width, dy + 0.5 * width);
    let ix = count((dx - 0.5 * length).max(-0.5 * length), (dx + 0.5 * length).min(0.5 * length));
    let iy = count((dy - 0.5 * width).max(-0.5 * width), (dy + 0.5 * width).min(0.5 * width));
    let inter = ix * iy;
    inter / (a + b - inter)
}

fn iou_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_exact, mut worst_pixel) = (0.0f64, 0.0f64);
    let mut bounded = true;
    for _ in 0..1000 {
        let l = rng.random_range(1.0..8.0);
        let w = rng.random_range(0.5..3.0);
        let q = rng.random_range(0.05..0.95);
        let (dx, dy) = iou_offsets(l, w, q, &mut rng);
        bounded &= dx.abs() <= max_longitudinal_offset(l, q) + 1e-12;
        worst_exact = worst_exact.max((iou_same_size(l, w, dx, dy) - q).abs());
        worst_pixel = worst_pixel.max((pixel_iou(l, w, dx, dy, 1e-3) - q).abs());
    }
    outcome(
        worst_exact < 1e-9 && worst_pixel < 0.01 && bounded,
        format!("max analytic error {worst_exact:.2e}, max pixel-oracle error {worst_pixel:.2e}"),
    )
}

// Criterion 3 --------------------------------------------------------------

fn outline(b: &OrientedBox, step: f64) -> Vec<Vec2> {
    let c = b.corners();
    let mut pts = Vec::new();
    for i in 0..4 {
        let (p, q) = (c[i], c[(i + 1) % 4]);
        let n = (p.distance(q) / step).ceil() as usize;
        pts.extend((0..n).map(|k| p + (q - p) * (k as f64 / n as f64)));
    }
    pts
}

/// Dense outline sampling: verdict plus penetration depth or gap.
fn sampled_overlap(a: &OrientedBox, b: &OrientedBox, step: f64) -> (bool, f64) {
    let mut depth = 0.0f64;
    let mut gap = f64::INFINITY;
    for (x, y) in [(a, b), (b, a)] {
        for p in outline(x, step) {
            let d = y.signed_distance(p);
            depth = depth.max(-d);
            gap = gap.min(d);
        }
    }
    if gap <= 0.0 {
        (true, depth)
    } else {
        (false, gap)
    }
}

fn random_box(rng: &mut ChaCha8Rng, spread: f64) -> OrientedBox {
    OrientedBox::new(
        Pose2D::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-3.2..3.2),
        ),
        rng.random_range(0.5..6.0),
        rng.random_range(0.5..3.0),
    )
}

fn sat_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut checked, mut agree, mut overlapping) = (0, 0, 0);
    while checked < 1000 {
        let a = random_box(&mut rng, 1.0);
        let b = random_box(&mut rng, 4.0);
        let (truth, clearance) = sampled_overlap(&a, &b, 5e-4);
        if clearance <= 1e-3 {
            continue;
        }
        checked += 1;
        agree += (boxes_overlap(&a, &b) == truth) as usize;
        overlapping += truth as usize;
    }
    outcome(
        agree == checked,
        format!("{agree}/{checked} pairs agree ({overlapping} overlapping)"),
    )
}

// Shared data --------------------------------------------------------------

struct Lab {
    cfg: LabConfig,
    splits: Splits,
}

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let mut cfg = LabConfig::default();
        cfg.raster = RasterConfig {
            size_px: 128,
            resolution: 1.0,
            history_frames: 3,
        };
        cfg.train.learning_rate = 1e-3;
        let splits = Splits::generate(&cfg, 10).unwrap();
        Lab { cfg, splits }
    })
}

impl Lab {
    fn clean(&self) -> &[Scene] {
        &self.splits.train[..self.cfg.data.train_scenes]
    }

    fn train_config(&self, seed: u64, stride: usize) -> TrainConfig {
        TrainConfig {
            seed,
            sample_stride: stride,
            ..self.cfg.train.clone()
        }
    }

    fn fit(&self, scenes: &[Scene], seed: u64, stride: usize) -> (PlannerModel, Vec<f64>) {
        let (model, report) = train(
            scenes,
            DataProvenance::of_scenes(scenes, self.splits.data_seed),
            &self.cfg.raster,
            &self.train_config(seed, stride),
        )
        .unwrap();
        (model, report.epoch_losses)
    }

    fn ade(&self, model: &PlannerModel) -> f64 {
        open_loop_ade(model, &self.splits.test, ADE_STRIDE).unwrap().ade_m
    }
}

fn range_cell(range: SensorRange) -> QualityCell {
    QualityCell {
        range_m: range,
        ..QualityCell::av_grade()
    }
}

// Criteria 4 and 5 ---------------------------------------------------------

fn identity_degradation() -> Outcome {
    let lab = lab();
    let scenes = lab.splits.test.iter().chain(lab.clean());
    let (mut total, mut identical) = (0, 0);
    for s in scenes {
        let out = degrade(s, &DegradationConfig::av_grade().with_seed(total as u64)).unwrap();
        total += 1;
        identical += (out == *s && scene_to_string(&out) == scene_to_string(s)) as usize;
    }
    outcome(identical == total, format!("{identical}/{total} scenes bit-identical"))
}

fn expert_oracle() -> Outcome {
    let test = &lab().splits.test;
    let ade = open_loop_ade(&ExpertReplay, test, 1).unwrap();
    let rollouts = closed_loop_all(&ExpertReplay, test, DEFAULT_DEVIATION_LIMIT_M).unwrap();
    let summary = collision_rate(&rollouts).unwrap();
    let completed = rollouts.iter().filter(|r| r.termination == Termination::Completed).count();
    outcome(
        test.len() == 24 && ade.ade_m == 0.0 && summary.rate == 0.0,
        format!(
            "{} scenes: ADE {} over {} steps, collision rate {} over {} steps, {completed} completed",
            test.len(),
            ade.ade_m,
            ade.n_steps,
            summary.rate,
            summary.n_steps
        ),
    )
}

// Criterion 6 --------------------------------------------------------------

fn training_sanity(clean_model: &mut Option<PlannerModel>) -> Outcome {
    let lab = lab();
    let start = Instant::now();
    let (model, losses) = lab.fit(lab.clean(), 0, 1);
    let elapsed = start.elapsed();
    let (first, last) = (losses[0], *losses.last().unwrap());
    let reduction = 1.0 - last / first;
    *clean_model = Some(model);
    outcome(
        losses.len() == 15 && reduction >= 0.5 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "epoch 1 loss {first:.3}, epoch {} loss {last:.3}, reduction {:.1}%, {:.0} s",
            losses.len(),
            100.0 * reduction,
            elapsed.as_secs_f64()
        ),
    )
}

// Criteria 7 and 8 ---------------------------------------------------------

struct RangeRuns {
    ade20: Vec<f64>,
    ade40: Vec<f64>,
    full: Vec<f64>,
    tuned20: Vec<f64>,
}

fn range_runs() -> &'static RangeRuns {
    static RUNS: OnceLock<RangeRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let lab = lab();
        let clean = lab.clean();
        let mut runs = RangeRuns {
            ade20: vec![],
            ade40: vec![],
            full: vec![],
            tuned20: vec![],
        };
        for seed in SEEDS {
            for (range, out) in [
                (SensorRange::Meters(20.0), &mut runs.ade20),
                (SensorRange::Meters(40.0), &mut runs.ade40),
                (SensorRange::Unlimited, &mut runs.full),
            ] {
                let data = degrade_all(clean, &range_cell(range), seed).unwrap();
                let (model, _) = lab.fit(&data, seed, RANGE_STRIDE);
                out.push(lab.ade(&model));
                if range == SensorRange::Meters(20.0) {
                    let (tuned, _) = fine_tune(
                        &model,
                        clean,
                        DataProvenance::of_scenes(clean, lab.splits.data_seed),
                        &lab.train_config(seed, RANGE_STRIDE),
                    )
                    .unwrap();
                    runs.tuned20.push(lab.ade(&tuned));
                }
            }
        }
        runs
    })
}

fn range_trend() -> Outcome {
    let r = range_runs();
    let (m20, m40, mfull) = (median(&r.ade20), median(&r.ade40), median(&r.full));
    let gap = m20 - mfull;
    outcome(
        m20 >= 1.2 * mfull && m40 - mfull < 0.5 * gap,
        format!(
            "median ADE 20 m {m20:.4}, 40 m {m40:.4}, full {mfull:.4}; 20 m gap {:.1}%, 40 m excess {:.4} vs half-gap {:.4} \
             (per seed 20 m [{}], 40 m [{}], full [{}])",
            100.0 * gap / mfull,
            m40 - mfull,
            0.5 * gap,
            fmt(&r.ade20),
            fmt(&r.ade40),
            fmt(&r.full)
        ),
    )
}

fn fine_tune_trend() -> Outcome {
    let r = range_runs();
    let closed: Vec<f64> = (0..SEEDS.len())
        .map(|i| (r.ade20[i] - r.tuned20[i]) / (r.ade20[i] - r.full[i]))
        .collect();
    let m = median(&closed);
    outcome(
        m >= 0.3,
        format!(
            "median gap reduction {:.1}% (per seed [{}]; fine-tuned ADE [{}])",
            100.0 * m,
            fmt(&closed),
            fmt(&r.tuned20)
        ),
    )
}

// Criterion 9 --------------------------------------------------------------

fn quantity_vs_quality() -> Outcome {
    let lab = lab();
    let cell = QualityCell {
        range_m: SensorRange::Meters(40.0),
        fov_deg: 130.0,
        ..QualityCell::av_grade()
    };
    let (mut small, mut large) = (vec![], vec![]);
    for seed in SEEDS {
        let (m, _) = lab.fit(lab.clean(), seed, QUANTITY_STRIDE);
        small.push(lab.ade(&m));
        let data = degrade_all(&lab.splits.train, &cell, seed).unwrap();
        let (m, _) = lab.fit(&data, seed, QUANTITY_STRIDE);
        large.push(lab.ade(&m));
    }
    let (ms, ml) = (median(&small), median(&large));
    outcome(
        ml < ms,
        format!(
            "median ADE 10x (40 m, 130 deg) {ml:.4} vs 1x AV-grade {ms:.4} (per seed [{}] vs [{}])",
            fmt(&large),
            fmt(&small)
        ),
    )
}

// Criterion 10 -------------------------------------------------------------

fn influence_distribution(clean_model: &mut Option<PlannerModel>) -> Outcome {
    let lab = lab();
    let model = clean_model.get_or_insert_with(|| lab.fit(lab.clean(), 0, 1).0);
    let h = influence_histogram(&*model, &lab.splits.test, 5).unwrap();
    let very = h.records.iter().filter(|r| r.class == InfluenceClass::Very).count();
    let share = very_share_within(&h, 40.0);
    let mass = |s: usize| h.sectors[s].very + h.sectors[s].slight;
    let (front, rear) = (mass(0), mass(4));
    outcome(
        share.is_some_and(|s| s >= 0.7) && front > rear,
        format!(
            "{very} very-influential of {} pairs, {:.1}% within 40 m; influential pairs front {front}, rear {rear}",
            h.records.len(),
            100.0 * share.unwrap_or(0.0)
        ),
    )
}

// Criterion 11 -------------------------------------------------------------

const GRID_CONFIG: &str = r#"{
    "seed": 9,
    "raster": {"size_px": 32, "resolution": 2.0, "history_frames": 2},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.001, "seed": 0, "sample_stride": 30},
    "data": {"train_scenes": 3, "test_scenes": 2},
    "eval": {"ade_frame_stride": 20, "deviation_limit_m": 4.0, "influence_frame_stride": 20},
    "grid": {"ranges": [20, 40, 60, "unlimited"], "fovs_deg": [70, 130, 270, 360], "target_ious": [1.0],
             "rot_deg": [0], "hours": [1], "seeds": [0, 1]}
}"#;

fn without_wall_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| match l.rfind(',') {
            Some(i) if !l.starts_with('#') => l[..i].to_string(),
            _ => l.to_string(),
        })
        .collect()
}

fn grid_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lab.json"), GRID_CONFIG).unwrap();
    let mut tables = Vec::new();
    for out in ["first.csv", "second.csv"] {
        let status = Command::new(env!("CARGO_BIN_EXE_sensorgrade"))
            .current_dir(dir.path())
            .args(["--config", "lab.json", "--deterministic", "grid", "--out", out])
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("grid exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
        }
        tables.push(fs::read_to_string(dir.path().join(out)).unwrap());
    }
    let rows = read_table(&dir.path().join("first.csv")).unwrap();
    let same = without_wall_time(&tables[0]) == without_wall_time(&tables[1]);
    outcome(
        same && rows.len() == 32,
        format!(
            "{} rows, {} bytes; identical apart from wall_time_s: {same}",
            rows.len(),
            tables[0].len()
        ),
    )
}

// Criterion 12 -------------------------------------------------------------

fn collision_bookkeeping() -> Outcome {
    let rollouts: Vec<RolloutResult> = (0..10)
        .map(|i| RolloutResult {
            scene_id: format!("fixture-{i}"),
            steps_simulated: 100,
            collided: i == 3 || i == 7,
            termination: if i == 3 || i == 7 {
                Termination::Collision
            } else {
                Termination::Completed
            },
            trace: Vec::new(),
        })
        .collect();
    let s = collision_rate(&rollouts).unwrap();
    // The rate also survives the results table unchanged.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let (mut w, _) = TableWriter::open(&path, false).unwrap();
    w.append(&ResultRow {
        experiment: "fixture".into(),
        row_key: "k".into(),
        range: "unlimited".into(),
        fov: 360.0,
        iou: 1.0,
        rot: 0.0,
        hours_equiv: 0.25,
        n_train_scenes: 36,
        fine_tuned: false,
        seed: 0,
        data_seed: 0,
        ade_m: Some(0.0),
        collision_rate: Some(s.rate),
        n_steps: Some(s.n_steps),
        n_collisions: Some(s.n_collisions),
        n_completed: Some(8),
        n_deviations: Some(0),
        status: RowStatus::Ok,
        error: String::new(),
        wall_time_s: 0.0,
    })
    .unwrap();
    drop(w);
    let stored = read_table(&path).unwrap()[0].collision_rate;
    let text = fs::read_to_string(&path).unwrap();
    outcome(
        s.n_collisions == 2 && s.n_steps == 1000 && s.rate == 0.002 && stored == Some(0.002) && text.contains(",0.002,"),
        format!("{} collisions over {} steps, rate {} (stored {:?})", s.n_collisions, s.n_steps, s.rate, stored),
    )
}

#[test]
fn acceptance_criteria() {
    let selected: Option<Vec<usize>> = std::env::var("SENSORGRADE_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| selected.as_ref().is_none_or(|s| s.contains(&n));
    let mut clean_model = None;
    let mut failed = Vec::new();
    let mut line = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        // Written past the test harness capture so every line shows up.
        let mut out = std::io::stdout().lock();
        let _ = writeln!(
            out,
            "acceptance {n:>2} {verdict} {name}: {} [{:.0} s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        let _ = out.flush();
        if !o.pass {
            failed.push(n);
        }
    };
    line(1, "gradient check", &mut gradient_check);
    line(2, "IoU calibration", &mut iou_calibration);
    line(3, "SAT overlap oracle", &mut sat_oracle);
    line(4, "identity degradation", &mut identity_degradation);
    line(5, "expert replay oracle", &mut expert_oracle);
    line(6, "training sanity", &mut || training_sanity(&mut clean_model));
    line(7, "range trend", &mut range_trend);
    line(8, "fine-tuning trend", &mut fine_tune_trend);
    line(9, "quantity vs quality", &mut quantity_vs_quality);
    line(10, "influence distribution", &mut || influence_distribution(&mut clean_model));
    line(11, "grid reproducibility", &mut grid_reproducibility);
    line(12, "collision bookkeeping", &mut collision_bookkeeping);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
