//! File formats: trajectory CSV/JSONL, flat key-value config files for
//! scenarios and training, report/grid CSVs and the grid heat map.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use tpose_core::matrix::Matrix;
use tpose_core::metrics::HorizonError;
use tpose_core::pose::Pose3Dof;
use tpose_core::synth::{ScenarioSpec, ScheduleSpec};
use tpose_core::train::{EpochLog, TrainConfig};
use tpose_core::trajectory::{Dataset, PoseRecord};

pub const CSV_HEADER: &str = "track_id,t,x,y,qz,qw";

/// Loads trajectory records from a `.csv` or `.jsonl`/`.json` file, chosen
/// by extension. Parse failures name the offending line.
pub fn load_records(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "csv" => parse_csv(&text),
        "jsonl" | "json" => parse_jsonl(&text),
        other => bail!(
            "unsupported data format '.{}' for {} (use .csv or .jsonl)",
            other,
            path.display()
        ),
    }
    .with_context(|| format!("while loading {}", path.display()))
}

fn parse_csv(text: &str) -> Result<Vec<PoseRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers().context("missing CSV header")?;
        let got: Vec<&str> = headers.iter().collect();
        let want: Vec<&str> = CSV_HEADER.split(',').collect();
        if got != want {
            bail!("expected CSV header `{}`, got `{}`", CSV_HEADER, got.join(","));
        }
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| anyhow!("line {}: missing column {}", line, i + 1))
        };
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse::<f64>()
                .map_err(|e| anyhow!("line {}: column {}: {}", line, i + 1, e))
        };
        let pose = Pose3Dof::new(num(2)?, num(3)?, num(4)?, num(5)?)
            .map_err(|e| anyhow!("line {}: {}", line, e))?;
        records.push(PoseRecord {
            track_id: field(0)?.to_string(),
            t: num(1)?,
            pose,
        });
    }
    if records.is_empty() {
        bail!("no data rows");
    }
    Ok(records)
}

#[derive(Deserialize)]
struct JsonRecord {
    track_id: String,
    t: f64,
    x: f64,
    y: f64,
    qz: f64,
    qw: f64,
}

fn parse_jsonl(text: &str) -> Result<Vec<PoseRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let r: JsonRecord = serde_json::from_str(line)
            .map_err(|e| anyhow!("line {}: {}", i + 1, e))?;
        let pose = Pose3Dof::new(r.x, r.y, r.qz, r.qw)
            .map_err(|e| anyhow!("line {}: {}", i + 1, e))?;
        records.push(PoseRecord {
            track_id: r.track_id,
            t: r.t,
            pose,
        });
    }
    if records.is_empty() {
        bail!("no data rows");
    }
    Ok(records)
}

/// Serializes a dataset back to the CSV format, one row per sample in
/// trajectory order.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for traj in &ds.trajectories {
        for s in &traj.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                traj.track_id, s.t, s.pose.x, s.pose.y, s.pose.qz, s.pose.qw
            ));
        }
    }
    out
}

/// Parses a flat `key = value` file: one pair per line, `#` comments,
/// blank lines ignored. Unknown keys are rejected through `apply`.
fn parse_kv(text: &str, mut apply: impl FnMut(&str, &str, usize) -> Result<()>) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{}`", i + 1, line))?;
        apply(key.trim(), value.trim(), i + 1)?;
    }
    Ok(())
}

fn parse_waypoints(value: &str, line: usize) -> Result<Vec<[f64; 2]>> {
    let mut pts = Vec::new();
    for part in value.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (x, y) = part
            .split_once(',')
            .ok_or_else(|| anyhow!("line {}: waypoint `{}` is not `x,y`", line, part))?;
        pts.push([
            x.trim().parse().map_err(|e| anyhow!("line {}: {}", line, e))?,
            y.trim().parse().map_err(|e| anyhow!("line {}: {}", line, e))?,
        ]);
    }
    if pts.is_empty() {
        bail!("line {}: waypoint list is empty", line);
    }
    Ok(pts)
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => bail!("line {}: expected a boolean, got `{}`", line, other),
    }
}

/// Scenario config for the synthetic walker generator. Keys: walkers,
/// waypoints, speed_min, speed_max, noise_sigma, interval, days,
/// start_hms_min, start_hms_max, schedule_split_hms, schedule_am_waypoints,
/// schedule_pm_waypoints.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::default();
    let mut split_hms: Option<f64> = None;
    let mut am: Option<Vec<[f64; 2]>> = None;
    let mut pm: Option<Vec<[f64; 2]>> = None;
    parse_kv(text, |key, value, line| {
        let num = || -> Result<f64> {
            value.parse().map_err(|e| anyhow!("line {}: {}: {}", line, key, e))
        };
        match key {
            "walkers" => spec.walkers = num()? as usize,
            "waypoints" => spec.waypoints = parse_waypoints(value, line)?,
            "speed_min" => spec.speed_min = num()?,
            "speed_max" => spec.speed_max = num()?,
            "noise_sigma" => spec.noise_sigma = num()?,
            "interval" => spec.interval = num()?,
            "days" => spec.days = num()? as u32,
            "start_hms_min" => spec.start_hms_min = num()?,
            "start_hms_max" => spec.start_hms_max = num()?,
            "schedule_split_hms" => split_hms = Some(num()?),
            "schedule_am_waypoints" => am = Some(parse_waypoints(value, line)?),
            "schedule_pm_waypoints" => pm = Some(parse_waypoints(value, line)?),
            other => bail!("line {}: unknown scenario key `{}`", line, other),
        }
        Ok(())
    })?;
    match (split_hms, am, pm) {
        (None, None, None) => {}
        (Some(s), Some(a), Some(p)) => {
            spec.schedule = Some(ScheduleSpec {
                split_hms: s,
                am_waypoints: a,
                pm_waypoints: p,
            });
        }
        _ => bail!(
            "schedule needs all three keys: schedule_split_hms, schedule_am_waypoints, schedule_pm_waypoints"
        ),
    }
    Ok(spec)
}

/// Training config overrides on top of `base`. Every field has a key
/// (stage fields carry `stage1_`/`stage2_` prefixes); the extra `interval`
/// key sets the resampling interval and is returned separately.
pub fn parse_train_config(text: &str, base: TrainConfig) -> Result<(TrainConfig, Option<f64>)> {
    let mut cfg = base;
    let mut interval = None;
    parse_kv(text, |key, value, line| {
        let num = || -> Result<f64> {
            value.parse().map_err(|e| anyhow!("line {}: {}: {}", line, key, e))
        };
        let int = || -> Result<usize> {
            value.parse().map_err(|e| anyhow!("line {}: {}: {}", line, key, e))
        };
        match key {
            "layers" => cfg.layers = int()?,
            "hidden" => cfg.hidden = int()?,
            "use_time" => cfg.use_time = parse_bool(value, line)?,
            "batch_size" => cfg.batch_size = int()?,
            "stage1_seq_len" => cfg.stage1.seq_len = int()?,
            "stage1_epochs" => cfg.stage1.epochs = int()?,
            "stage1_lr" => cfg.stage1.lr = num()?,
            "stage1_decay" => cfg.stage1.decay = num()?,
            "stage2_len_min" => cfg.stage2.len_min = int()?,
            "stage2_len_max" => cfg.stage2.len_max = int()?,
            "stage2_epochs" => cfg.stage2.epochs = int()?,
            "stage2_lr" => cfg.stage2.lr = num()?,
            "stage2_decay" => cfg.stage2.decay = num()?,
            "lambda" => cfg.lambda = num()?,
            "reg_biases" => cfg.reg_biases = parse_bool(value, line)?,
            "rms_decay" => cfg.rms_decay = num()?,
            "epsilon" => cfg.epsilon = num()?,
            "grad_clip" => cfg.grad_clip = num()?,
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|e| anyhow!("line {}: seed: {}", line, e))?;
            }
            "interval" => interval = Some(num()?),
            other => bail!("line {}: unknown training key `{}`", line, other),
        }
        Ok(())
    })?;
    Ok((cfg, interval))
}

pub const LOG_HEADER: &str = "epoch,stage,lr,nll,rot,reg,total";

pub fn log_line(log: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        log.epoch, log.stage, log.lr, log.nll, log.rot, log.reg, log.total
    )
}

pub const REPORT_HEADER: &str = "horizon_steps,horizon_seconds,ade_m,aede_deg,windows";

pub fn report_to_csv(report: &[HorizonError]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for h in report {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.horizon_steps, h.horizon_seconds, h.ade_m, h.aede_deg, h.windows
        ));
    }
    out
}

/// Grid CSV: first row and column label the observation/prediction lengths.
pub fn grid_to_csv(grid: &Matrix) -> String {
    let (rows, cols) = grid.shape();
    let mut out = String::from("obs\\pred");
    for b in 1..=cols {
        out.push_str(&format!(",{}", b));
    }
    out.push('\n');
    for a in 0..rows {
        out.push_str(&format!("{}", a + 1));
        for b in 0..cols {
            out.push_str(&format!(",{}", grid.get(a, b)));
        }
        out.push('\n');
    }
    out
}

/// Renders the grid as a binary PPM heat map (dark blue = low error,
/// yellow/red = high), one `cell` × `cell` pixel block per entry.
pub fn grid_to_ppm(grid: &Matrix, cell: usize) -> Vec<u8> {
    let (rows, cols) = grid.shape();
    let (lo, hi) = grid
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = cols * cell;
    let height = rows * cell;
    let mut out = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    for py in 0..height {
        for px in 0..width {
            let v = grid.get(py / cell, px / cell);
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            out.extend_from_slice(&heat_color(t));
        }
    }
    out
}

/// Blue → cyan → yellow → red ramp.
fn heat_color(t: f64) -> [u8; 3] {
    let seg = |a: f64, b: f64| ((t - a) / (b - a)).clamp(0.0, 1.0);
    let (r, g, b) = if t < 1.0 / 3.0 {
        let s = seg(0.0, 1.0 / 3.0);
        (0.0, s, 1.0 - 0.5 * s)
    } else if t < 2.0 / 3.0 {
        let s = seg(1.0 / 3.0, 2.0 / 3.0);
        (s, 1.0, 0.5 - 0.5 * s)
    } else {
        let s = seg(2.0 / 3.0, 1.0);
        (1.0, 1.0 - s, 0.0)
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Track ids in first-appearance order, for commands that iterate tracks.
pub fn track_ids(ds: &Dataset) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut ids = Vec::new();
    for traj in &ds.trajectories {
        if seen.insert(traj.track_id.clone()) {
            ids.push(traj.track_id.clone());
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_preserves_records() {
        let text = "track_id,t,x,y,qz,qw\nw1,100.5,1.25,-2.5,0,1\nw2,101,3,4,0.6,0.8\n";
        let records = parse_csv(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].track_id, "w1");
        assert_eq!(records[0].t, 100.5);
        assert_eq!(records[1].pose.qz, 0.6);
        let ds = Dataset::from_records(records.clone()).unwrap();
        let back = parse_csv(&dataset_to_csv(&ds)).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "track_id,t,x,y,qz,qw\nw1,100,1,2,0,1\nw1,bad,1,2,0,1\n";
        let err = format!("{:#}", parse_csv(text).unwrap_err());
        assert!(err.contains("line 3"), "got: {}", err);
        let text = "track_id,t,x,y,qz,qw\nw1,100,1,2,1e-9,1e-9\n";
        let err = format!("{:#}", parse_csv(text).unwrap_err());
        assert!(err.contains("line 2"), "got: {}", err);
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn jsonl_parses_and_rejects_with_line_numbers() {
        let text = r#"{"track_id":"a","t":1.0,"x":0.5,"y":0.25,"qz":0.0,"qw":1.0}
{"track_id":"a","t":2.0,"x":1.5,"y":0.25,"qz":0.0,"qw":-1.0}
"#;
        let records = parse_jsonl(text).unwrap();
        assert_eq!(records.len(), 2);
        // canonicalization flips qw=-1 to +1
        assert_eq!(records[1].pose.qw, 1.0);
        let bad = "{\"track_id\":\"a\"}\n";
        let err = format!("{:#}", parse_jsonl(bad).unwrap_err());
        assert!(err.contains("line 1"), "got: {}", err);
    }

    #[test]
    fn scenario_parsing_covers_all_keys() {
        let text = "
# a junction
walkers = 12
waypoints = 0,0; 5,0; 5,5
speed_min = 0.9
speed_max = 1.1
noise_sigma = 0.02
interval = 0.4
days = 3
start_hms_min = 28800
start_hms_max = 64800
schedule_split_hms = 43200
schedule_am_waypoints = 0,0; 10,0
schedule_pm_waypoints = 0,0; 0,10
";
        let spec = parse_scenario(text).unwrap();
        assert_eq!(spec.walkers, 12);
        assert_eq!(spec.waypoints.len(), 3);
        assert_eq!(spec.days, 3);
        let sched = spec.schedule.unwrap();
        assert_eq!(sched.split_hms, 43200.0);
        assert_eq!(sched.am_waypoints, vec![[0.0, 0.0], [10.0, 0.0]]);
        assert!(parse_scenario("bogus_key = 1\n").is_err());
        assert!(parse_scenario("schedule_split_hms = 1\n").is_err());
        assert!(parse_scenario("walkers 5\n").is_err());
    }

    #[test]
    fn train_config_overrides_and_rejects_unknowns() {
        let text = "
layers = 3
stage1_epochs = 7
stage2_lr = 0.001
use_time = true
seed = 42
interval = 0.4
";
        let (cfg, interval) = parse_train_config(text, TrainConfig::default()).unwrap();
        assert_eq!(cfg.layers, 3);
        assert_eq!(cfg.stage1.epochs, 7);
        assert_eq!(cfg.stage2.lr, 0.001);
        assert!(cfg.use_time);
        assert_eq!(cfg.seed, 42);
        assert_eq!(interval, Some(0.4));
        // untouched fields keep their base values
        assert_eq!(cfg.batch_size, 128);
        assert!(parse_train_config("typo = 1\n", TrainConfig::default()).is_err());
    }

    #[test]
    fn grid_csv_labels_both_axes() {
        let grid = Matrix::from_fn(2, 3, |a, b| (a * 3 + b) as f64);
        let csv = grid_to_csv(&grid);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "obs\\pred,1,2,3");
        assert_eq!(lines[1], "1,0,1,2");
        assert_eq!(lines[2], "2,3,4,5");
    }

    #[test]
    fn ppm_has_correct_header_and_size() {
        let grid = Matrix::from_fn(2, 3, |a, b| (a + b) as f64);
        let ppm = grid_to_ppm(&grid, 4);
        let header = b"P6\n12 8\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert_eq!(ppm.len(), header.len() + 12 * 8 * 3);
        // low cell is blue-ish, high cell is red-ish
        let first = &ppm[header.len()..header.len() + 3];
        assert!(first[2] > first[0]);
        let last = &ppm[ppm.len() - 3..];
        assert!(last[0] > last[2]);
    }
}
