//! Experiment CLI: train the benchmark tasks, evaluate saved
//! checkpoints, and run the built-in numerical self-checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wnp::cnp;
use wnp::error::Error;
use wnp::losses::Objective;
use wnp::selfcheck;
use wnp::tasks;
use wnp::trainer::{self, ExperimentName, TrainConfig};

#[derive(Parser)]
#[command(name = "wnp", about = "Wasserstein neural process experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train one experiment and write metrics, checkpoints, and eval artifacts
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on its task
    Eval(EvalArgs),
    /// Run the numerical self-checks and report pass/fail per check
    Selfcheck,
}

#[derive(Args)]
struct TrainArgs {
    /// Task name: uniform_regression, gk, or tiles
    #[arg(long)]
    task: String,
    /// Objective: swd, gaussian_nll, or uniform_loglik
    #[arg(long)]
    objective: Option<String>,
    /// Match the joint (x, y) clouds instead of y alone
    #[arg(long)]
    joint: Option<bool>,
    #[arg(long)]
    n_proj: Option<usize>,
    /// Wasserstein power p
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training steps
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_base: Option<f64>,
    #[arg(long)]
    lr_max: Option<f64>,
    /// Enable the triangular cyclic learning rate
    #[arg(long)]
    cyclic: Option<bool>,
    #[arg(long)]
    cycle_steps: Option<usize>,
    /// Context fraction range lower bound
    #[arg(long)]
    p0: Option<f64>,
    /// Context fraction range upper bound
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    r_dim: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    /// Uniform likelihood tube half-width
    #[arg(long)]
    halfwidth: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Tiles only: train on PGM/PPM images from this directory
    #[arg(long)]
    image_dir: Option<PathBuf>,
    /// Tiles only: cap on the number of corpus images
    #[arg(long)]
    limit: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Flat key = value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: String,
    /// Checkpoint written by a training run
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Parse a flat `key = value` file with `#` comments into a map,
/// rejecting malformed lines by number.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                lineno + 1
            ))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parsed<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, Error> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            Error::Config(format!("config key '{key}' has invalid value '{raw}'"))
        }),
    }
}

const CONFIG_KEYS: [&str; 18] = [
    "objective", "joint", "n_proj", "power", "seed", "epochs", "lr_base", "lr_max",
    "cyclic", "cycle_steps", "p0", "p1", "hidden", "r_dim", "n_points", "halfwidth",
    "checkpoint_every", "clip_norm",
];

/// Build the run config: task defaults, overridden by the config file,
/// overridden by flags.
fn resolve_config(args: &TrainArgs, task: ExperimentName) -> Result<TrainConfig, Error> {
    let file = match &args.config {
        Some(path) => {
            let map = parse_config_file(path)?;
            for key in map.keys() {
                if key != "task" && !CONFIG_KEYS.contains(&key.as_str()) {
                    return Err(Error::Config(format!("unknown config key '{key}'")));
                }
            }
            map
        }
        None => BTreeMap::new(),
    };

    let objective = match args.objective.clone().or_else(|| file.get("objective").cloned()) {
        Some(s) => s.parse::<Objective>()?,
        None => Objective::Swd,
    };
    let mut cfg = TrainConfig::for_task(task, objective);

    macro_rules! set {
        ($field:ident, $flag:expr, $key:literal) => {
            if let Some(v) = $flag.or(parsed(&file, $key)?) {
                cfg.$field = v;
            }
        };
    }
    set!(joint, args.joint, "joint");
    set!(n_proj, args.n_proj, "n_proj");
    set!(p, args.power, "power");
    set!(seed, args.seed, "seed");
    set!(epochs, args.epochs, "epochs");
    set!(lr_base, args.lr_base, "lr_base");
    set!(lr_max, args.lr_max, "lr_max");
    set!(cyclic, args.cyclic, "cyclic");
    set!(cycle_steps, args.cycle_steps, "cycle_steps");
    set!(p0, args.p0, "p0");
    set!(p1, args.p1, "p1");
    set!(hidden, args.hidden, "hidden");
    set!(r_dim, args.r_dim, "r_dim");
    set!(n_points, args.n_points, "n_points");
    set!(halfwidth, args.halfwidth, "halfwidth");
    set!(checkpoint_every, args.checkpoint_every, "checkpoint_every");
    set!(clip_norm, None, "clip_norm");
    if let Some(dir) = &args.image_dir {
        cfg.image_dir = Some(dir.clone());
    }
    if args.limit.is_some() {
        cfg.limit = args.limit;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    task: String,
    started_at: String,
    build: &'a str,
    config: &'a TrainConfig,
    outputs: Vec<String>,
}

fn write_manifest(task: ExperimentName, cfg: &TrainConfig, out: &Path) -> Result<(), Error> {
    let outputs = std::fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect::<Vec<_>>();
    let manifest = RunManifest {
        task: task.to_string(),
        started_at: chrono::Utc::now().to_rfc3339(),
        build: env!("CARGO_PKG_VERSION"),
        config: cfg,
        outputs,
    };
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(out.join("manifest.json"))?),
        &manifest,
    )?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let task: ExperimentName = args.task.parse()?;
    let cfg = resolve_config(args, task)?;
    let summary = trainer::run_experiment(task, &cfg, &args.out)?;
    write_manifest(task, &cfg, &args.out)?;
    println!(
        "task={} objective={} steps={} final_loss={} final_metric={}",
        summary.task, summary.objective, summary.steps, summary.final_loss, summary.final_metric
    );
    for (key, value) in &summary.eval {
        println!("{key}={value}");
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let task: ExperimentName = args.task.parse()?;
    let (params, _seed, step) = cnp::load_checkpoint(&args.checkpoint)?;
    let seed = args.seed.unwrap_or(12345);
    std::fs::create_dir_all(&args.out)?;
    println!("checkpoint step={step}");
    match task {
        ExperimentName::UniformRegression => {
            let rows = trainer::eval_uniform(&params, 200, seed)?;
            let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let (slope, intercept) = tasks::ols_fit(&xs, &ys);
            println!("slope={slope} intercept={intercept}");
        }
        ExperimentName::Gk => {
            let (model, truth) = trainer::eval_gk(&params, 10_000, seed)?;
            let w1 = wnp::transport::wasserstein_1d_pow_vals(&model, &truth, 1.0)?;
            println!("w1_model_true={w1}");
        }
        ExperimentName::Tiles => {
            let images = tasks::synth_mixed(40, 1, seed.wrapping_add(7_000))?;
            let grids: Vec<tasks::TileGrid> = images
                .iter()
                .map(tasks::image_to_tiles)
                .collect::<Result<_, _>>()?;
            let per_image = trainer::eval_tiles(&params, &grids, 8, seed)?;
            let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
            println!("holdout_swd={mean}");
        }
    }
    Ok(())
}

fn cmd_selfcheck() -> Result<(), Error> {
    let results = selfcheck::run_all();
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("[{status}] {}: {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::contract(format!("{failed} self-check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Selfcheck => cmd_selfcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
