//! Training loop: context-fraction sampling, episode forward pass,
//! objective dispatch, Adam updates with an optional triangular cyclic
//! learning rate, checkpointing, and per-step metric logging.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnp::{self, ModelParams, TaskBatch};
use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{self, LossReport, Objective};
use crate::tasks;
use crate::transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    UniformRegression,
    Gk,
    Tiles,
}

pub const EXPERIMENT_NAMES: [&str; 3] = ["uniform_regression", "gk", "tiles"];

impl std::str::FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_regression" => Ok(ExperimentName::UniformRegression),
            "gk" => Ok(ExperimentName::Gk),
            "tiles" => Ok(ExperimentName::Tiles),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (valid tasks: {})",
                EXPERIMENT_NAMES.join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentName::UniformRegression => "uniform_regression",
            ExperimentName::Gk => "gk",
            ExperimentName::Tiles => "tiles",
        };
        f.write_str(s)
    }
}

/// Everything a run needs besides the task itself. `epochs` counts
/// training steps; each step consumes one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub p0: f64,
    pub p1: f64,
    pub n_proj: usize,
    pub p: f64,
    pub objective: Objective,
    pub joint: bool,
    pub lr_base: f64,
    pub lr_max: f64,
    pub cyclic: bool,
    pub cycle_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub hidden: usize,
    pub r_dim: usize,
    pub n_points: usize,
    pub halfwidth: f64,
    /// Keep the episode's own context instead of re-sampling a fraction.
    pub context_from_episode: bool,
    /// Tiles only: train on PGM/PPM images from this directory instead
    /// of the synthetic corpus.
    pub image_dir: Option<std::path::PathBuf>,
    /// Tiles only: cap on the number of ingested images.
    pub limit: Option<usize>,
    /// Global L2 gradient-norm cap; rare heavy-tailed episodes
    /// otherwise produce updates large enough to saturate the network.
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn for_task(name: ExperimentName, objective: Objective) -> TrainConfig {
        let base = TrainConfig {
            p0: 0.05,
            p1: 0.5,
            n_proj: 50,
            p: 2.0,
            objective,
            joint: true,
            lr_base: 1e-3,
            lr_max: 1e-2,
            cyclic: false,
            cycle_steps: 200,
            epochs: 2000,
            seed: 0,
            checkpoint_every: 500,
            hidden: 64,
            r_dim: 32,
            n_points: 500,
            halfwidth: 1.0,
            context_from_episode: false,
            image_dir: None,
            limit: None,
            clip_norm: 10.0,
        };
        match name {
            ExperimentName::UniformRegression => base,
            ExperimentName::Gk => TrainConfig {
                hidden: 128,
                cyclic: true,
                epochs: 3000,
                n_points: 200,
                context_from_episode: true,
                ..base
            },
            ExperimentName::Tiles => TrainConfig {
                hidden: 128,
                epochs: 2000,
                n_points: 200,
                context_from_episode: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 <= self.p1 && self.p1 <= 1.0) {
            return Err(Error::Config(format!(
                "context fractions need 0 < p0 <= p1 <= 1, got p0={}, p1={}",
                self.p0, self.p1
            )));
        }
        if self.lr_base > self.lr_max {
            return Err(Error::Config(format!(
                "lr_base={} exceeds lr_max={}",
                self.lr_base, self.lr_max
            )));
        }
        if self.cyclic && self.cycle_steps < 2 {
            return Err(Error::Config("cycle_steps must be at least 2".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.p < 1.0 {
            return Err(Error::Config(format!("power p must be >= 1, got {}", self.p)));
        }
        for (name, v) in [
            ("n_proj", self.n_proj),
            ("epochs", self.epochs),
            ("checkpoint_every", self.checkpoint_every),
            ("hidden", self.hidden),
            ("r_dim", self.r_dim),
            ("n_points", self.n_points),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Adam accumulators, one pair per parameter tensor.
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.values.len()).collect();
        OptimizerState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over all parameter tensors.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() {
        return Err(Error::contract(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            tensors.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (i, tensor) in tensors.iter_mut().enumerate() {
        if grads[i].values.len() != tensor.values.len() {
            return Err(Error::contract(format!(
                "gradient {i} has {} values, parameter has {}",
                grads[i].values.len(),
                tensor.values.len()
            )));
        }
        for (j, g) in grads[i].values.iter().enumerate() {
            let m = &mut state.m[i][j];
            let v = &mut state.v[i][j];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            tensor.values[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Triangular wave: base -> max over the first half cycle, back down
/// over the second; period = `cycle_steps`.
pub fn lr_at(step: usize, lr_base: f64, lr_max: f64, cycle_steps: usize) -> f64 {
    let pos = (step % cycle_steps) as f64;
    let half = cycle_steps as f64 / 2.0;
    let frac = if pos <= half { pos / half } else { (cycle_steps as f64 - pos) / half };
    lr_base + (lr_max - lr_base) * frac
}

/// Draw p in [p0, p1] and pick max(1, round(p * n)) unique indices.
pub fn sample_context(n: usize, p0: f64, p1: f64, rng: &mut impl Rng) -> Vec<usize> {
    let p = if p0 == p1 { p0 } else { rng.gen_range(p0..=p1) };
    let count = ((p * n as f64).round() as usize).clamp(1, n);
    rand::seq::index::sample(rng, n, count).into_vec()
}

/// Scale all gradients down uniformly if their global L2 norm exceeds
/// `max_norm`.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.values.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in &mut g.values {
                *v *= scale;
            }
        }
    }
}

fn effective_lr(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.cyclic {
        lr_at(step, cfg.lr_base, cfg.lr_max, cfg.cycle_steps)
    } else {
        cfg.lr_base
    }
}

/// One optimizer step on one episode. Degenerate losses (and the
/// uniform objective, whose gradient is identically zero) skip the
/// parameter update.
pub fn train_step(
    params: &mut ModelParams,
    episode: &TaskBatch,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    let episode = if cfg.context_from_episode {
        episode.clone()
    } else {
        let idx = sample_context(episode.len(), cfg.p0, cfg.p1, rng);
        TaskBatch::new(episode.x_target.clone(), episode.y_target.clone(), idx)?
    };
    let proj_seed: u64 = rng.gen();

    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let out = cnp::forward_episode(&mut tape, &tracked, &episode)?;

    let (loss_tensor, report) = match cfg.objective {
        Objective::Swd => {
            let (loss, report) = losses::swd_loss(
                &mut tape,
                &out,
                &episode.y_target,
                &episode.x_target,
                cfg.joint,
                cfg.n_proj,
                cfg.p,
                proj_seed,
            )?;
            (Some(loss), report)
        }
        Objective::GaussianNll => {
            let (mu, sigma) = cnp::gaussian_split(&mut tape, &out, params.d_y)?;
            let (loss, report) = losses::gaussian_nll(&mut tape, &mu, &sigma, &episode.y_target)?;
            (Some(loss), report)
        }
        Objective::UniformLoglik => {
            let report = losses::uniform_loglik(&out, &episode.y_target, cfg.halfwidth)?;
            // piecewise-constant objective: no gradient, no update
            (None, report)
        }
    };

    if let Some(loss) = loss_tensor {
        if report.degenerate {
            return Ok(report);
        }
        let grads = tape.backward(&loss)?;
        let mut grad_tensors: Vec<Tensor> =
            tracked.tensors().iter().map(|t| grads.wrt(t)).collect();
        clip_gradients(&mut grad_tensors, cfg.clip_norm);
        adam_step(params, &grad_tensors, state, effective_lr(cfg, step))?;
        if params.tensors().iter().any(|t| !t.all_finite()) {
            return Err(Error::contract(format!(
                "non-finite parameter after step {step}"
            )));
        }
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub task: String,
    pub objective: String,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub final_metric: f64,
    pub eval: BTreeMap<String, f64>,
    pub config: TrainConfig,
}

pub const GK_THETA: (f64, f64, f64, f64) = (3.0, 1.0, 2.0, 0.5);

fn gk_theta() -> tasks::GkParams {
    tasks::GkParams::new(GK_THETA.0, GK_THETA.1, GK_THETA.2, GK_THETA.3).unwrap()
}

/// Decode a dense x grid with a context set drawn from fresh task data;
/// returns (x, y_true, y_pred) rows.
pub fn eval_uniform(params: &ModelParams, n_grid: usize, seed: u64) -> Result<Vec<(f64, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = tasks::gen_linear_uniform(500, 1.0, 0.0, 0.5, (-2.0, 2.0), &mut rng)?;
    let idx = sample_context(data.len(), 0.5, 0.5, &mut rng);
    let ctx = TaskBatch::new(data.x_target.clone(), data.y_target.clone(), idx)?;
    let (x_c, y_c) = ctx.context_xy();

    let grid: Vec<f64> = (0..n_grid)
        .map(|i| -2.0 + 4.0 * i as f64 / (n_grid - 1) as f64)
        .collect();
    let x_t = Tensor::matrix(n_grid, 1, grid.clone())?;
    let mut tape = Tape::new();
    let tp = params.as_constants();
    let r_c = cnp::encode_context(&mut tape, &tp, &x_c, &y_c)?;
    let out = cnp::decode_targets(&mut tape, &tp, &x_t, &r_c)?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, x, out.values[i * out.dims2().1]))
        .collect())
}

/// Draw n samples from the trained model (decode at uniform quantile
/// positions) and n fresh true samples; returns (model, true) columns.
pub fn eval_gk(params: &ModelParams, n_samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let theta = gk_theta();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx_episode = tasks::gen_gk_episode(&theta, 100, 1, &mut rng)?;
    let (x_c, y_c) = ctx_episode.context_xy();
    let mut tape = Tape::new();
    let tp = params.as_constants();
    let r_c = cnp::encode_context(&mut tape, &tp, &x_c, &y_c)?;

    let mut model = Vec::with_capacity(n_samples);
    let chunk = 1000;
    let mut drawn = 0;
    while drawn < n_samples {
        let take = chunk.min(n_samples - drawn);
        let rs: Vec<f64> = (0..take).map(|_| rng.gen_range(1e-9..1.0 - 1e-9)).collect();
        let x_t = Tensor::matrix(take, 1, rs)?;
        let out = cnp::decode_targets(&mut tape, &tp, &x_t, &r_c)?;
        let w = out.dims2().1;
        model.extend((0..take).map(|i| out.values[i * w]));
        drawn += take;
    }
    let truth = tasks::gk_sample(&theta, n_samples, &mut rng);
    Ok((model, truth))
}

/// Per-image reconstruction distance on held-out images: decode all 64
/// tiles from a fixed-size context and compare the joint (one-hot,
/// tile) clouds by rooted sliced Wasserstein distance.
pub fn eval_tiles(
    params: &ModelParams,
    grids: &[tasks::TileGrid],
    n_context: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let tp = params.as_constants();
    let mut dists = Vec::with_capacity(grids.len());
    for (i, grid) in grids.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let episode = tasks::gen_tile_episode(grid, n_context, &mut rng)?;
        let mut tape = Tape::new();
        let out = cnp::forward_episode(&mut tape, &tp, &episode)?;
        let pred = prediction_mean(&out, episode.y_target.dims2().1)?;
        let pred_cloud = tape.concat_cols(&episode.x_target, &pred)?;
        let true_cloud = tape.concat_cols(&episode.x_target, &episode.y_target)?;
        let d = transport::sliced_wasserstein_report(
            &transport::EmpiricalDistribution::new(pred_cloud)?,
            &transport::EmpiricalDistribution::new(true_cloud)?,
            100,
            2.0,
            seed,
        )?;
        dists.push(d);
    }
    Ok(dists)
}

/// For the Gaussian head the decoder emits (mu, sigma) column pairs;
/// reconstruction compares the means only.
fn prediction_mean(out: &Tensor, d_y: usize) -> Result<Tensor> {
    let (n, w) = out.dims2();
    if w == d_y {
        return Ok(out.clone());
    }
    let values: Vec<f64> = (0..n)
        .flat_map(|i| out.values[i * w..i * w + d_y].iter().copied())
        .collect();
    Tensor::matrix(n, d_y, values)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn csv_row(
    file: &mut impl Write,
    step: usize,
    lr: f64,
    report: &LossReport,
    wall_ms: u128,
) -> Result<()> {
    writeln!(
        file,
        "{step},{lr},{},{},{},{wall_ms}",
        report.loss, report.metric, report.degenerate as u8
    )?;
    Ok(())
}

/// Reconstruct a few holdout images from their predicted tiles and dump
/// them next to the ground truth as PGM files.
fn dump_tile_previews(
    params: &ModelParams,
    grids: &[tasks::TileGrid],
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    let tp = params.as_constants();
    for (i, grid) in grids.iter().take(4).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let episode = tasks::gen_tile_episode(grid, 8, &mut rng)?;
        let mut tape = Tape::new();
        let out = cnp::forward_episode(&mut tape, &tp, &episode)?;
        let pred = prediction_mean(&out, grid.tile_width())?;
        let w = grid.tile_width();
        let pred_grid = tasks::TileGrid {
            channels: grid.channels,
            tiles: (0..64).map(|t| pred.values[t * w..(t + 1) * w].to_vec()).collect(),
        };
        if grid.channels == 3 {
            tasks::write_ppm(
                &tasks::tiles_to_image(&pred_grid),
                &out_dir.join(format!("tiles_pred_{i}.ppm")),
            )?;
            tasks::write_ppm(
                &tasks::tiles_to_image(grid),
                &out_dir.join(format!("tiles_true_{i}.ppm")),
            )?;
        } else {
            tasks::write_pgm(
                &tasks::tiles_to_image(&pred_grid),
                &out_dir.join(format!("tiles_pred_{i}.pgm")),
            )?;
            tasks::write_pgm(
                &tasks::tiles_to_image(grid),
                &out_dir.join(format!("tiles_true_{i}.pgm")),
            )?;
        }
    }
    Ok(())
}

/// Train the named experiment, logging metrics per step, checkpointing
/// periodically, and writing plot-ready evaluation artifacts at the end.
pub fn run_experiment(name: ExperimentName, cfg: &TrainConfig, out_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    // fail before training if the directory is unwritable
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "step,lr,loss,metric,degenerate,wall_ms")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta = gk_theta();

    // task-specific fixed data
    let uniform_data = match name {
        ExperimentName::UniformRegression => Some(tasks::gen_linear_uniform(
            cfg.n_points,
            1.0,
            0.0,
            0.5,
            (-2.0, 2.0),
            &mut rng,
        )?),
        _ => None,
    };
    let (train_grids, holdout_grids) = match name {
        ExperimentName::Tiles => {
            let images = match &cfg.image_dir {
                Some(dir) => tasks::ingest_image_dir(dir, cfg.limit.unwrap_or(usize::MAX))?,
                None => tasks::synth_mixed(cfg.limit.unwrap_or(200), 1, cfg.seed.wrapping_add(7_000))?,
            };
            if images.len() < 2 {
                return Err(Error::Config(format!(
                    "tiles needs at least 2 images, got {}",
                    images.len()
                )));
            }
            let grids: Vec<tasks::TileGrid> =
                images.iter().map(tasks::image_to_tiles).collect::<Result<_>>()?;
            let split = grids.len() - (grids.len() / 5).max(1);
            let holdout = grids[split..].to_vec();
            (grids[..split].to_vec(), holdout)
        }
        _ => (Vec::new(), Vec::new()),
    };

    let (d_x, d_y) = match name {
        ExperimentName::UniformRegression | ExperimentName::Gk => (1, 1),
        ExperimentName::Tiles => (64, train_grids[0].tile_width()),
    };
    let mut params = cnp::init_params(
        d_x,
        d_y,
        cfg.hidden,
        cfg.r_dim,
        cfg.objective.head(),
        cfg.seed,
    )?;
    let mut state = OptimizerState::new(&params);

    let mut eval: BTreeMap<String, f64> = BTreeMap::new();
    if name == ExperimentName::Tiles {
        let start = mean(&eval_tiles(&params, &holdout_grids, 8, cfg.seed.wrapping_add(9_000))?);
        eval.insert("holdout_swd_start".into(), start);
    }

    let mut last = LossReport { loss: f64::NAN, metric: f64::NAN, degenerate: false };
    for step in 0..cfg.epochs {
        let t0 = Instant::now();
        let episode = match name {
            ExperimentName::UniformRegression => uniform_data.as_ref().unwrap().clone(),
            ExperimentName::Gk => {
                let p = rng.gen_range(cfg.p0..=cfg.p1);
                let n_ctx = ((p * cfg.n_points as f64).round() as usize)
                    .clamp(1, cfg.n_points - 1);
                tasks::gen_gk_episode(&theta, n_ctx, cfg.n_points - n_ctx, &mut rng)?
            }
            ExperimentName::Tiles => {
                let img = rng.gen_range(0..train_grids.len());
                let n_ctx = rng.gen_range(4..=16);
                tasks::gen_tile_episode(&train_grids[img], n_ctx, &mut rng)?
            }
        };
        last = train_step(&mut params, &episode, cfg, &mut state, step, &mut rng)?;
        csv_row(&mut metrics, step, effective_lr(cfg, step), &last, t0.elapsed().as_millis())?;
        if (step + 1) % cfg.checkpoint_every == 0 {
            cnp::save_checkpoint(
                &params,
                cfg.seed,
                (step + 1) as u64,
                &out_dir.join(format!("checkpoint_{:06}.ckpt", step + 1)),
            )?;
        }
    }
    metrics.flush()?;
    cnp::save_checkpoint(&params, cfg.seed, cfg.epochs as u64, &out_dir.join("checkpoint.ckpt"))?;

    // final evaluation artifacts
    match name {
        ExperimentName::UniformRegression => {
            let rows = eval_uniform(&params, 200, cfg.seed.wrapping_add(5_000))?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("eval.csv"))?);
            writeln!(file, "x,y_true,y_pred")?;
            for (x, yt, yp) in &rows {
                writeln!(file, "{x},{yt},{yp}")?;
            }
            let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let (slope, intercept) = tasks::ols_fit(&xs, &ys);
            eval.insert("slope".into(), slope);
            eval.insert("intercept".into(), intercept);
        }
        ExperimentName::Gk => {
            let (model, truth) = eval_gk(&params, 10_000, cfg.seed.wrapping_add(5_000))?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("eval.csv"))?);
            writeln!(file, "model,true")?;
            for (m, t) in model.iter().zip(&truth) {
                writeln!(file, "{m},{t}")?;
            }
            let w1 = transport::wasserstein_1d_pow_vals(&model, &truth, 1.0)?;
            let floor_a = tasks::gk_sample(&theta, 10_000, &mut rng);
            let floor_b = tasks::gk_sample(&theta, 10_000, &mut rng);
            let floor = transport::wasserstein_1d_pow_vals(&floor_a, &floor_b, 1.0)?;
            eval.insert("w1_model_true".into(), w1);
            eval.insert("w1_noise_floor".into(), floor);
        }
        ExperimentName::Tiles => {
            let per_image =
                eval_tiles(&params, &holdout_grids, 8, cfg.seed.wrapping_add(9_000))?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("eval.csv"))?);
            writeln!(file, "image,reconstruction_swd")?;
            for (i, d) in per_image.iter().enumerate() {
                writeln!(file, "{i},{d}")?;
            }
            eval.insert("holdout_swd_end".into(), mean(&per_image));
            dump_tile_previews(&params, &holdout_grids, out_dir, cfg.seed.wrapping_add(9_000))?;
        }
    }

    let summary = Summary {
        task: name.to_string(),
        objective: cfg.objective.to_string(),
        seed: cfg.seed,
        steps: cfg.epochs,
        final_loss: last.loss,
        final_metric: last.metric,
        eval,
        config: cfg.clone(),
    };
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(out_dir.join("summary.json"))?),
        &summary,
    )?;
    Ok(summary)
}
