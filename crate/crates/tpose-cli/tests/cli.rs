//! End-to-end tests of the `tpose` binary: every subcommand, the exit-code
//! contract (0 success, 1 runtime failure, 2 usage error), and the stream
//! line protocol, all against a small synthesized dataset.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tpose")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "`tpose {}` failed with {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// One dataset and one trained model, built once and shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
    config: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("scenario.txt");
        std::fs::write(
            &scenario,
            "walkers = 12\n\
             waypoints = 0,0; 5,0; 5,4\n\
             speed_min = 0.9\n\
             speed_max = 1.1\n\
             noise_sigma = 0.03\n\
             interval = 0.4\n",
        )
        .unwrap();
        let config = dir.path().join("train.txt");
        std::fs::write(
            &config,
            "stage1_epochs = 2\n\
             stage2_epochs = 1\n\
             interval = 0.4\n\
             seed = 5\n",
        )
        .unwrap();
        let data = dir.path().join("data.csv");
        let model = dir.path().join("model.bin");
        run_ok(&[
            "synth", "--scenario", scenario.to_str().unwrap(),
            "--seed", "3", "--out", data.to_str().unwrap(),
        ]);
        run_ok(&[
            "train", "--data", data.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
            "--quiet", "--out", model.to_str().unwrap(),
        ]);
        Fixture {
            _dir: dir,
            data,
            model,
            config,
        }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sc.txt");
    std::fs::write(&scenario, "walkers = 3\nwaypoints = 0,0; 4,0\n").unwrap();

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    run_ok(&["synth", "--scenario", s(&scenario), "--seed", "9", "--out", s(&a)]);
    run_ok(&["synth", "--scenario", s(&scenario), "--seed", "9", "--out", s(&b)]);
    run_ok(&["synth", "--scenario", s(&scenario), "--seed", "10", "--out", s(&c)]);

    let (ba, bb, bc) = (
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        std::fs::read(&c).unwrap(),
    );
    assert_eq!(ba, bb, "same seed must reproduce the same file");
    assert_ne!(ba, bc, "different seeds must differ");

    let text = std::fs::read_to_string(&fx.data).unwrap();
    assert!(text.starts_with("track_id,t,x,y,qz,qw\n"));
    assert!(text.lines().count() > 12, "one header plus many samples");
}

#[test]
fn train_writes_model_and_epoch_log() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let log = dir.path().join("log.csv");
    run_ok(&[
        "train", "--data", s(&fx.data), "--config", s(&fx.config),
        "--quiet", "--out", s(&model), "--log", s(&log),
    ]);

    assert!(std::fs::metadata(&model).unwrap().len() > 100_000);
    let log_text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = log_text.lines().collect();
    assert_eq!(lines[0], "epoch,stage,lr,nll,rot,reg,total");
    assert_eq!(lines.len(), 1 + 3, "2 stage-1 epochs + 1 stage-2 epoch");
    assert!(lines[1].starts_with("0,1,"));
    assert!(lines[3].starts_with("0,2,"));
}

#[test]
fn eval_reports_each_requested_horizon() {
    let fx = fixture();
    let out = run_ok(&[
        "eval", "--model", s(&fx.model), "--data", s(&fx.data),
        "--obs", "4", "--horizons", "1,3",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "horizon_steps,horizon_seconds,ade_m,aede_deg,windows");
    assert_eq!(lines.len(), 3, "header plus one row per horizon");
    let row1: Vec<&str> = lines[1].split(',').collect();
    let row3: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(row1[0], "1");
    assert_eq!(row3[0], "3");
    // Steps are 0.4 s apart, so the horizons land at 0.4 s and 1.2 s.
    assert!((row1[1].parse::<f64>().unwrap() - 0.4).abs() < 1e-9);
    assert!((row3[1].parse::<f64>().unwrap() - 1.2).abs() < 1e-9);
    assert!(row1[2].parse::<f64>().unwrap() > 0.0);
    assert!(row1[4].parse::<usize>().unwrap() >= row3[4].parse::<usize>().unwrap());
}

#[test]
fn grid_writes_labeled_csv_and_ppm_heatmap() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let heat = dir.path().join("grid.ppm");
    let out = run_ok(&[
        "grid", "--model", s(&fx.model), "--data", s(&fx.data),
        "--obs-max", "2", "--pred-max", "3",
        "--heatmap", s(&heat), "--cell", "8",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "obs\\pred,1,2,3");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert!(lines[2].starts_with("2,"));
    for line in &lines[1..] {
        for cell in line.split(',').skip(1) {
            assert!(cell.parse::<f64>().unwrap() >= 0.0);
        }
    }

    let ppm = std::fs::read(&heat).unwrap();
    let header = format!("P6\n{} {}\n255\n", 3 * 8, 2 * 8);
    assert!(ppm.starts_with(header.as_bytes()));
    assert_eq!(ppm.len(), header.len() + 3 * 8 * 2 * 8 * 3);
}

#[test]
fn predict_emits_one_row_per_future_step() {
    let fx = fixture();
    let out = run_ok(&[
        "predict", "--model", s(&fx.model), "--data", s(&fx.data),
        "--track", "w0000", "--obs", "4", "--horizon", "4",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "track_id,step,t_pred,x,y,qz,qw,sigma_x,sigma_y,rho"
    );
    assert_eq!(lines.len(), 1 + 4);
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 10);
        assert_eq!(cols[0], "w0000");
        assert_eq!(cols[1], (i + 1).to_string());
        let t = cols[2].parse::<f64>().unwrap();
        assert!(t > last_t, "prediction times must increase");
        last_t = t;
        assert!(cols[7].parse::<f64>().unwrap() > 0.0, "sigma_x positive");
    }
}

#[test]
fn stream_speaks_the_line_protocol() {
    let fx = fixture();
    let mut child = Command::new(bin())
        .args([
            "stream", "--model", s(&fx.model), "--horizon", "2",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();

    {
        let stdin = child.stdin.as_mut().unwrap();
        write!(
            stdin,
            "OBS w1 100.0 0.0 0.0 0.0 1.0\n\
             OBS w1 100.4 0.4 0.0 0.0 1.0\n\
             OBS w1 100.8 0.8 0.0 0.0 1.0\n\
             what is this\n\
             BYE w1\n\
             BYE w1\n"
        )
        .unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    let preds: Vec<&&str> = lines.iter().filter(|l| l.starts_with("PRED ")).collect();
    let errs: Vec<&&str> = lines.iter().filter(|l| l.starts_with("ERR ")).collect();
    assert_eq!(preds.len(), 6, "3 observations x 2 horizon steps");
    assert_eq!(errs.len(), 2, "one junk line, one BYE for a closed track");

    // First prediction block follows the first observation at t = 100.0.
    let first: Vec<&str> = preds[0].split_whitespace().collect();
    assert_eq!(first.len(), 11);
    assert_eq!(first[1], "w1");
    assert_eq!(first[2], "100.400000");
    assert_eq!(first[3], "1");
    // Junk came on line 4, the doubled BYE on line 6.
    assert!(errs[0].starts_with("ERR 4 "));
    assert!(errs[1].starts_with("ERR 6 "));
}

#[test]
fn usage_errors_exit_with_2() {
    let missing_arg = run(&["synth", "--seed", "1"]);
    assert_eq!(missing_arg.status.code(), Some(2));

    let unknown_cmd = run(&["conjure"]);
    assert_eq!(unknown_cmd.status.code(), Some(2));

    let unknown_flag = run(&["eval", "--frobnicate"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1_and_explain() {
    let fx = fixture();

    let no_file = run(&["eval", "--model", "/nonexistent.bin", "--data", s(&fx.data)]);
    assert_eq!(no_file.status.code(), Some(1));
    let err = String::from_utf8(no_file.stderr).unwrap();
    assert!(err.starts_with("error: "), "stderr was: {}", err);
    assert!(err.contains("/nonexistent.bin"));

    let bad_preset = run(&[
        "train", "--data", s(&fx.data), "--preset", "bogus", "--out", "/tmp/x.bin",
    ]);
    assert_eq!(bad_preset.status.code(), Some(1));
    assert!(String::from_utf8(bad_preset.stderr).unwrap().contains("bogus"));

    let bad_mode = run(&[
        "eval", "--model", s(&fx.model), "--data", s(&fx.data), "--mode", "psychic",
    ]);
    assert_eq!(bad_mode.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad_scenario = dir.path().join("sc.txt");
    std::fs::write(&bad_scenario, "walkers = 0\n").unwrap();
    let zero_walkers = run(&[
        "synth", "--scenario", s(&bad_scenario), "--out", s(&dir.path().join("d.csv")),
    ]);
    assert_eq!(zero_walkers.status.code(), Some(1));

    let no_track = run(&[
        "predict", "--model", s(&fx.model), "--data", s(&fx.data),
        "--track", "ghost", "--horizon", "2",
    ]);
    assert_eq!(no_track.status.code(), Some(1));
    assert!(String::from_utf8(no_track.stderr).unwrap().contains("ghost"));
}
