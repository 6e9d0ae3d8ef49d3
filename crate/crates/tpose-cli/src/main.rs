//! `tpose` — train, evaluate and serve pedestrian pose-trajectory
//! forecasts. Subcommands: synth, train, eval, grid, predict, stream.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod formats;
mod stream;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use tpose_core::model::{deserialize, serialize, ModelParams};
use tpose_core::predict::{rollout, RolloutConfig, RolloutMode};
use tpose_core::synth::generate_synthetic;
use tpose_core::train::{train, TrainConfig};
use tpose_core::trajectory::{apply_norm, extract_features, Dataset};

use formats::{
    dataset_to_csv, grid_to_csv, grid_to_ppm, load_records, log_line, parse_scenario,
    parse_train_config, report_to_csv, track_ids, LOG_HEADER,
};
use stream::{run_stream, StreamConfig};

#[derive(Parser)]
#[command(
    name = "tpose",
    version,
    about = "Pedestrian 3DOF pose-trajectory forecasting: LSTM with a Gaussian position head"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic waypoint-walker dataset as CSV.
    Synth {
        /// Scenario config file (flat key = value).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a trajectory file.
    Train {
        /// Input trajectories (.csv or .jsonl).
        #[arg(long)]
        data: PathBuf,
        /// Preset: "strands" (1 layer, 1 s) or "lcas" (3 layers, 0.4 s).
        #[arg(long, default_value = "strands")]
        preset: String,
        /// Config file overriding preset fields (flat key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resampling interval in seconds (default: from config or preset).
        #[arg(long)]
        interval: Option<f64>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Feed calendar-day/time-of-day features (override).
        #[arg(long)]
        use_time: Option<bool>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (epoch,stage,lr,nll,rot,reg,total).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a model: ADE/AEDE per horizon over sliding windows.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Observed steps per window.
        #[arg(long, default_value_t = 5)]
        obs: usize,
        /// Comma-separated prediction horizons in steps.
        #[arg(long, default_value = "1,2,3,4,5")]
        horizons: String,
        /// Rollout mode: "mean" (deterministic) or "sample".
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Observation-length × prediction-length ADE grid.
    Grid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        obs_max: usize,
        #[arg(long)]
        pred_max: usize,
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render a PPM heat map here.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Heat map pixels per cell.
        #[arg(long, default_value_t = 16)]
        cell: usize,
    },
    /// One-shot forecast from the tail of each track in a file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only this track (default: every track).
        #[arg(long)]
        track: Option<String>,
        /// Observations to condition on (the track's last N samples).
        #[arg(long, default_value_t = 5)]
        obs: usize,
        /// Steps to predict.
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the line protocol on stdin/stdout (OBS/BYE in, PRED/ERR out).
    Stream {
        #[arg(long)]
        model: PathBuf,
        /// Steps predicted after every observation.
        #[arg(long)]
        horizon: usize,
        /// Drop sessions idle longer than this many seconds of data time.
        #[arg(long)]
        gc_idle: Option<f64>,
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { scenario, seed, out } => cmd_synth(&scenario, seed, &out),
        Cmd::Train {
            data,
            preset,
            config,
            interval,
            seed,
            use_time,
            out,
            log,
            quiet,
        } => cmd_train(&data, &preset, config.as_deref(), interval, seed, use_time, &out, log.as_deref(), quiet),
        Cmd::Eval {
            model,
            data,
            obs,
            horizons,
            mode,
            samples,
            seed,
            out,
        } => cmd_eval(&model, &data, obs, &horizons, &mode, samples, seed, out.as_deref()),
        Cmd::Grid {
            model,
            data,
            obs_max,
            pred_max,
            mode,
            samples,
            seed,
            out,
            heatmap,
            cell,
        } => cmd_grid(&model, &data, obs_max, pred_max, &mode, samples, seed, out.as_deref(), heatmap.as_deref(), cell),
        Cmd::Predict {
            model,
            data,
            track,
            obs,
            horizon,
            mode,
            samples,
            seed,
            out,
        } => cmd_predict(&model, &data, track.as_deref(), obs, horizon, &mode, samples, seed, out.as_deref()),
        Cmd::Stream {
            model,
            horizon,
            gc_idle,
            mode,
            samples,
            seed,
        } => cmd_stream(&model, horizon, gc_idle, &mode, samples, seed),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let records = load_records(path)?;
    Dataset::from_records(records)
        .map_err(|e| anyhow!("{}: {}", path.display(), e))
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    deserialize(&bytes).map_err(|e| anyhow!("{}: {}", path.display(), e))
}

/// Resamples raw input data onto the model's grid, reporting dropped
/// too-short trajectories on stderr.
fn resample_for_model(ds: Dataset, params: &ModelParams) -> Result<Dataset> {
    let (out, dropped) = ds
        .resample_all(params.interval)
        .map_err(|e| anyhow!("resampling to the model's {} s interval: {}", params.interval, e))?;
    if dropped > 0 {
        eprintln!(
            "note: {} trajectories were too short for the {} s grid and were dropped",
            dropped, params.interval
        );
    }
    Ok(out)
}

fn parse_mode(mode: &str, samples: usize, seed: u64) -> Result<RolloutConfig> {
    let mode = match mode {
        "mean" | "distribution" => RolloutMode::DistributionMean,
        "sample" => RolloutMode::SampleMean,
        other => bail!("unknown rollout mode `{}` (use: mean, sample)", other),
    };
    Ok(RolloutConfig {
        horizon_steps: 1, // callers set the horizon
        n_samples: samples,
        mode,
        seed,
    })
}

fn parse_horizons(text: &str) -> Result<Vec<usize>> {
    let horizons: Vec<usize> = text
        .split(',')
        .map(|h| h.trim().parse::<usize>().map_err(|e| anyhow!("horizon `{}`: {}", h, e)))
        .collect::<Result<_>>()?;
    if horizons.is_empty() {
        bail!("horizon list is empty");
    }
    Ok(horizons)
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{}", content);
            Ok(())
        }
    }
}

fn cmd_synth(scenario: &Path, seed: u64, out: &Path) -> Result<()> {
    let text = fs::read_to_string(scenario)
        .with_context(|| format!("cannot read {}", scenario.display()))?;
    let spec = parse_scenario(&text)
        .with_context(|| format!("in scenario {}", scenario.display()))?;
    let ds = generate_synthetic(&spec, seed)?;
    fs::write(out, dataset_to_csv(&ds))
        .with_context(|| format!("cannot write {}", out.display()))?;
    eprintln!(
        "wrote {} trajectories ({} samples) to {}",
        ds.trajectories.len(),
        ds.n_samples(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    preset: &str,
    config: Option<&Path>,
    interval: Option<f64>,
    seed: Option<u64>,
    use_time: Option<bool>,
    out: &Path,
    log: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let mut cfg = TrainConfig::preset(preset)?;
    let preset_interval = match preset {
        "lcas" => 0.4,
        _ => 1.0,
    };
    let mut file_interval = None;
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let (merged, iv) = parse_train_config(&text, cfg)
            .with_context(|| format!("in config {}", path.display()))?;
        cfg = merged;
        file_interval = iv;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(u) = use_time {
        cfg.use_time = u;
    }
    let interval = interval.or(file_interval).unwrap_or(preset_interval);

    let (ds, dropped) = ds
        .resample_all(interval)
        .map_err(|e| anyhow!("resampling to {} s: {}", interval, e))?;
    if dropped > 0 {
        eprintln!("note: {} trajectories too short for the grid were dropped", dropped);
    }

    let (params, logs) = train(&ds, &cfg, |l| {
        if !quiet {
            eprintln!("{}", log_line(l));
        }
    })?;

    fs::write(out, serialize(&params))
        .with_context(|| format!("cannot write {}", out.display()))?;
    if let Some(path) = log {
        let mut text = String::from(LOG_HEADER);
        text.push('\n');
        for l in &logs {
            text.push_str(&log_line(l));
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    eprintln!("wrote model to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model: &Path,
    data: &Path,
    obs: usize,
    horizons: &str,
    mode: &str,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let params = load_model(model)?;
    let ds = resample_for_model(load_dataset(data)?, &params)?;
    let rc = parse_mode(mode, samples, seed)?;
    let cfg = tpose_core::metrics::EvalConfig {
        obs_len: obs,
        pred_horizons: parse_horizons(horizons)?,
        interval: params.interval,
    };
    let report = tpose_core::metrics::evaluate(&params, &ds, &cfg, &rc)?;
    write_or_print(out, &report_to_csv(&report))
}

#[allow(clippy::too_many_arguments)]
fn cmd_grid(
    model: &Path,
    data: &Path,
    obs_max: usize,
    pred_max: usize,
    mode: &str,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
    heatmap: Option<&Path>,
    cell: usize,
) -> Result<()> {
    if cell == 0 {
        bail!("--cell must be at least 1");
    }
    let params = load_model(model)?;
    let ds = resample_for_model(load_dataset(data)?, &params)?;
    let rc = parse_mode(mode, samples, seed)?;
    let grid = tpose_core::metrics::evaluate_grid(&params, &ds, obs_max, pred_max, &rc)?;
    write_or_print(out, &grid_to_csv(&grid))?;
    if let Some(path) = heatmap {
        fs::write(path, grid_to_ppm(&grid, cell))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

pub const PREDICT_HEADER: &str = "track_id,step,t_pred,x,y,qz,qw,sigma_x,sigma_y,rho";

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    model: &Path,
    data: &Path,
    track: Option<&str>,
    obs: usize,
    horizon: usize,
    mode: &str,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    if obs == 0 {
        bail!("--obs must be at least 1");
    }
    let params = load_model(model)?;
    let ds = resample_for_model(load_dataset(data)?, &params)?;
    let mut rc = parse_mode(mode, samples, seed)?;
    rc.horizon_steps = horizon;

    let ids: Vec<String> = match track {
        Some(id) => vec![id.to_string()],
        None => track_ids(&ds),
    };
    let mut text = String::from(PREDICT_HEADER);
    text.push('\n');
    for id in &ids {
        let traj = ds
            .trajectories
            .iter()
            .find(|t| &t.track_id == id)
            .ok_or_else(|| anyhow!("no track `{}` in {}", id, data.display()))?;
        if traj.samples.len() < obs {
            if track.is_some() {
                bail!(
                    "track `{}` has {} samples, fewer than --obs {}",
                    id, traj.samples.len(), obs
                );
            }
            eprintln!(
                "note: skipping track `{}` ({} samples < --obs {})",
                id, traj.samples.len(), obs
            );
            continue;
        }
        let feats: Vec<_> = extract_features(traj, params.use_time, params.day0)
            .iter()
            .map(|f| apply_norm(f, &params.norm))
            .collect();
        let observed = &feats[feats.len() - obs..];
        let t_last = traj.samples.last().expect("non-empty").t;
        let outp = rollout(&params, observed, &rc)
            .map_err(|e| anyhow!("track `{}`: {}", id, e))?;
        if outp.degenerate_rotations > 0 {
            eprintln!(
                "note: track `{}`: {} degenerate rotation outputs fell back to identity",
                id, outp.degenerate_rotations
            );
        }
        for p in &outp.poses {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                id,
                p.step,
                t_last + p.step as f64 * params.interval,
                p.pose.x,
                p.pose.y,
                p.pose.qz,
                p.pose.qw,
                p.sigma[0],
                p.sigma[1],
                p.rho
            ));
        }
    }
    write_or_print(out, &text)
}

fn cmd_stream(
    model: &Path,
    horizon: usize,
    gc_idle: Option<f64>,
    mode: &str,
    samples: usize,
    seed: u64,
) -> Result<()> {
    let params = load_model(model)?;
    let mut rc = parse_mode(mode, samples, seed)?;
    rc.horizon_steps = horizon;
    if horizon == 0 {
        bail!("--horizon must be at least 1");
    }
    let cfg = StreamConfig {
        rollout: rc,
        gc_idle,
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    run_stream(params, &cfg, stdin.lock(), stdout.lock())
}
