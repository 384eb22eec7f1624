use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use sensorgrade_core::io::{load_manifest, parse_json, write_atomic};
use sensorgrade_core::raster::rasterize;
use sensorgrade_core::world::{build_map, write_dataset};
use sensorgrade_core::{degrade, DegradationConfig, Quality, Scene};
use sensorgrade_planner::{
    closed_loop_all, collision_rate, fine_tune, load_model, open_loop_ade, save_model, train, DataProvenance,
    PlannerModel,
};

use sensorgrade_cli::config::LabConfig;
use sensorgrade_cli::experiments::{self, load_scenes, Splits};
use sensorgrade_cli::report::{build_report, write_report};
use sensorgrade_cli::results::{read_table, TableWriter};
use sensorgrade_cli::CliError;

#[derive(Parser, Debug)]
#[command(name = "sensorgrade", version, about = "Perception-quality experiments for a raster planner")]
struct Cli {
    /// JSON configuration document; defaults apply to absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the data, world and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run experiment cells one after another so rows are written in order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Write the first raster of the input scenes as PGM images here.
    #[arg(long, global = true)]
    dump_raster: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a procedural map and write it as JSON.
    Genmap {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate AV-grade train and test datasets under `out/train` and `out/test`.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Training scenes as a multiple of `data.train_scenes`.
        #[arg(long, default_value_t = 1)]
        multiplier: usize,
    },
    /// Degrade every scene of a dataset.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        /// JSON degradation config document.
        #[arg(long)]
        degradation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a planner from scratch.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint for two epochs at a tenth of its learning rate.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Open-loop ADE against the expert.
    EvalOpen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Closed-loop rollouts and pooled collision rate.
    EvalClosed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write one rollout record per scene here.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Agent influence histogram by distance and bearing.
    Influence {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Range x FoV and accuracy grid.
    Grid(ExperimentArgs),
    /// Large degraded corpus against the clean baseline.
    Quantity(ExperimentArgs),
    /// Markdown summary and SVG charts from a results table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
struct ExperimentArgs {
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Training manifest; generated from the config when absent.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Keep rows already in `out` and run only the missing ones.
    #[arg(long)]
    resume: bool,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    Ok(write_atomic(path, text.as_bytes())?)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("plain data serializes"));
}

fn load_config(cli: &Cli) -> Result<LabConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.world.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dump_first_raster(cli: &Cli, scenes: &[Scene], model: Option<&PlannerModel>, cfg: &LabConfig) -> Result<(), CliError> {
    let (Some(dir), Some(scene)) = (&cli.dump_raster, scenes.first()) else {
        return Ok(());
    };
    let raster_cfg = model.map(|m| &m.raster).unwrap_or(&cfg.raster);
    let frame = (raster_cfg.history_frames - 1).min(scene.len().saturating_sub(1));
    let raster = rasterize(scene, frame, raster_cfg)?;
    let paths = raster.dump_pgm(dir, &format!("{}_f{frame}", scene.scene_id))?;
    eprintln!("wrote {} raster channels to {}", paths.len(), dir.display());
    Ok(())
}

fn experiment(cli: &Cli, cfg: &LabConfig, args: &ExperimentArgs, quantity: bool) -> Result<(), CliError> {
    let max_mult = if quantity {
        cfg.quantity.multiplier
    } else {
        cfg.grid.hours.iter().copied().max().unwrap_or(1)
    };
    let splits = match (&args.train, &args.test) {
        (Some(train), Some(test)) => Splits::load(train, test)?,
        _ => Splits::generate(cfg, max_mult)?,
    };
    dump_first_raster(cli, &splits.test, None, cfg)?;
    let (mut writer, done) = TableWriter::open(&args.out, args.resume)?;
    let summary = if quantity {
        experiments::run_quantity(cfg, &splits, &mut writer, &done, cli.deterministic)?
    } else {
        experiments::run_grid(cfg, &splits, &mut writer, &done, cli.deterministic)?
    };
    eprintln!(
        "{} rows written ({} failed), {} jobs already complete",
        summary.written, summary.failed, summary.skipped_jobs
    );
    if summary.failed > 0 {
        return Err(CliError::Partial {
            failed: summary.failed,
            total: summary.written,
        });
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Genmap { out } => {
            let map = build_map(&cfg.world)?;
            write_json(&map, out)?;
        }
        Command::Gen { out, multiplier } => {
            if *multiplier == 0 {
                return Err(CliError::Config("--multiplier must be >= 1".into()).into());
            }
            let splits = Splits::generate(&cfg, *multiplier)?;
            dump_first_raster(cli, &splits.train, None, &cfg)?;
            write_dataset(&splits.train, &out.join("train"), Quality::AvGrade, cfg.seed)?;
            write_dataset(&splits.test, &out.join("test"), Quality::AvGrade, cfg.seed)?;
            eprintln!("wrote {} train and {} test scenes", splits.train.len(), splits.test.len());
        }
        Command::Degrade { input, degradation, out } => {
            let text = fs::read_to_string(degradation).map_err(|e| io_err(degradation, e))?;
            let config: DegradationConfig = parse_json(&text, degradation)?;
            config.validate()?;
            let scenes = load_scenes(input)?;
            let seed = load_manifest(input)?.seed;
            let degraded = scenes.iter().map(|s| degrade(s, &config)).collect::<Result<Vec<_>, _>>()?;
            dump_first_raster(cli, &degraded, None, &cfg)?;
            write_dataset(&degraded, out, Quality::Degraded(config), seed)?;
        }
        Command::Train { data, out, report } => {
            let scenes = load_scenes(data)?;
            dump_first_raster(cli, &scenes, None, &cfg)?;
            let provenance = DataProvenance::of_scenes(&scenes, load_manifest(data)?.seed);
            let (model, rep) = train(&scenes, provenance, &cfg.raster, &cfg.train)
                .with_context(|| format!("training on {}", data.display()))?;
            for (i, l) in rep.epoch_losses.iter().enumerate() {
                eprintln!("epoch {:>2}: mean loss {l:.4}", i + 1);
            }
            save_model(&model, out)?;
            if let Some(p) = report {
                write_json(&rep, p)?;
            }
        }
        Command::Finetune { model, data, out } => {
            let base = load_model(model)?;
            let scenes = load_scenes(data)?;
            let provenance = DataProvenance::of_scenes(&scenes, load_manifest(data)?.seed);
            let train_cfg = base.provenance.train_config.clone().unwrap_or_else(|| cfg.train.clone());
            let (tuned, rep) = fine_tune(&base, &scenes, provenance, &train_cfg)
                .with_context(|| format!("fine-tuning {} on {}", model.display(), data.display()))?;
            for (i, l) in rep.epoch_losses.iter().enumerate() {
                eprintln!("epoch {}: mean loss {l:.4}", i + 1);
            }
            save_model(&tuned, out)?;
        }
        Command::EvalOpen { model, data } => {
            let model = load_model(model)?;
            let scenes = load_scenes(data)?;
            dump_first_raster(cli, &scenes, Some(&model), &cfg)?;
            let report = open_loop_ade(&model, &scenes, cfg.eval.ade_frame_stride)?;
            print_json(&serde_json::json!({ "ade_m": report.ade_m, "n_steps": report.n_steps }));
        }
        Command::EvalClosed { model, data, traces } => {
            let model = load_model(model)?;
            let scenes = load_scenes(data)?;
            dump_first_raster(cli, &scenes, Some(&model), &cfg)?;
            let rollouts = closed_loop_all(&model, &scenes, cfg.eval.deviation_limit_m)?;
            if let Some(dir) = traces {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                for r in &rollouts {
                    write_json(r, &dir.join(format!("{}.rollout.json", r.scene_id)))?;
                }
            }
            print_json(&collision_rate(&rollouts)?);
        }
        Command::Influence { model, data, out } => {
            let model = load_model(model)?;
            let scenes = load_scenes(data)?;
            dump_first_raster(cli, &scenes, Some(&model), &cfg)?;
            let h = experiments::run_influence(&model, &scenes, &cfg)?;
            experiments::write_histogram(&h, out)?;
        }
        Command::Grid(args) => experiment(cli, &cfg, args, false).context("grid experiment")?,
        Command::Quantity(args) => experiment(cli, &cfg, args, true).context("quantity experiment")?,
        Command::Report { results, out } => {
            let rows = read_table(results)?;
            let report = build_report(&rows)?;
            for p in write_report(&report, out)? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
