//! Newline-delimited streaming protocol over any reader/writer pair.
//!
//! Input:  `OBS track_id t x y qz qw`   one observation; opens the session
//!                                      on first sight, re-opens after BYE.
//!         `BYE track_id`               closes a session.
//! Output: `PRED track_id t_pred step x y qz qw sigma_x sigma_y rho`
//!         one line per rollout step after every accepted observation, and
//!         `ERR <line-no> <reason>` for any rejected input line. Bad lines
//!         never stop the loop; only I/O failures do.

use std::io::{BufRead, Write};

use anyhow::Result;

use tpose_core::model::ModelParams;
use tpose_core::pose::Pose3Dof;
use tpose_core::predict::{RolloutConfig, SessionStore};

pub struct StreamConfig {
    pub rollout: RolloutConfig,
    /// Sessions idle longer than this (by data time) are dropped after each
    /// observation.
    pub gc_idle: Option<f64>,
}

pub fn run_stream(
    params: ModelParams,
    cfg: &StreamConfig,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<()> {
    let interval = params.interval;
    let mut store = SessionStore::new(params);
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let err = |output: &mut dyn Write, reason: &str| -> Result<()> {
            writeln!(output, "ERR {} {}", line_no, reason)?;
            Ok(())
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["OBS", id, rest @ ..] if rest.len() == 5 => {
                let mut nums = [0.0f64; 5];
                let mut bad = None;
                for (i, tok) in rest.iter().enumerate() {
                    match tok.parse::<f64>() {
                        Ok(v) => nums[i] = v,
                        Err(_) => {
                            bad = Some(format!("bad number `{}`", tok));
                            break;
                        }
                    }
                }
                if let Some(reason) = bad {
                    err(&mut output, &reason)?;
                    continue;
                }
                let [t, x, y, qz, qw] = nums;
                let pose = match Pose3Dof::new(x, y, qz, qw) {
                    Ok(p) => p,
                    Err(e) => {
                        err(&mut output, &e.to_string())?;
                        continue;
                    }
                };
                if let Err(e) = store.observe_or_open(id, t, &pose) {
                    err(&mut output, &e.to_string())?;
                    continue;
                }
                match store.predict(id, &cfg.rollout) {
                    Ok(out) => {
                        for p in &out.poses {
                            writeln!(
                                output,
                                "PRED {} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                                id,
                                t + p.step as f64 * interval,
                                p.step,
                                p.pose.x,
                                p.pose.y,
                                p.pose.qz,
                                p.pose.qw,
                                p.sigma[0],
                                p.sigma[1],
                                p.rho
                            )?;
                        }
                    }
                    Err(e) => err(&mut output, &e.to_string())?,
                }
                if let Some(idle) = cfg.gc_idle {
                    store.gc(t, idle);
                }
                output.flush()?;
            }
            ["OBS", ..] => err(&mut output, "OBS needs: track_id t x y qz qw")?,
            ["BYE", id] => {
                if let Err(e) = store.close(id) {
                    err(&mut output, &e.to_string())?;
                }
            }
            ["BYE", ..] => err(&mut output, "BYE needs exactly one track_id")?,
            [verb, ..] => err(&mut output, &format!("unknown command `{}`", verb))?,
        }
    }
    output.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tpose_core::predict::RolloutMode;

    fn test_params() -> ModelParams {
        let mut p = ModelParams::init_sized(3, 1, false, 8).unwrap();
        p.interval = 0.5;
        p
    }

    fn cfg(horizon: usize) -> StreamConfig {
        StreamConfig {
            rollout: RolloutConfig {
                horizon_steps: horizon,
                n_samples: 20,
                mode: RolloutMode::DistributionMean,
                seed: 0,
            },
            gc_idle: None,
        }
    }

    fn run(input: &str, cfg: &StreamConfig) -> Vec<String> {
        let mut out = Vec::new();
        run_stream(test_params(), cfg, input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(String::from)
            .collect()
    }

    #[test]
    fn obs_opens_and_emits_one_pred_per_step() {
        let out = run("OBS a 100.0 1.0 2.0 0.0 1.0\n", &cfg(3));
        assert_eq!(out.len(), 3);
        for (i, line) in out.iter().enumerate() {
            let tok: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(tok[0], "PRED");
            assert_eq!(tok[1], "a");
            let want_t = 100.0 + (i + 1) as f64 * 0.5;
            assert_eq!(tok[2], format!("{:.6}", want_t));
            assert_eq!(tok[3], (i + 1).to_string());
            assert_eq!(tok.len(), 11);
        }
    }

    #[test]
    fn malformed_lines_report_and_continue() {
        let input = "\
NOPE what\n\
OBS a 100.0 1.0 2.0 0.0 1.0\n\
OBS a 99.0 1.0 2.0 0.0 1.0\n\
OBS a xx 1.0 2.0 0.0 1.0\n\
OBS a 101.0 1.0\n\
OBS a 101.0 1.0 2.0 0.0 0.0\n\
OBS a 102.0 2.0 2.0 0.0 1.0\n";
        let out = run(input, &cfg(1));
        let errs: Vec<&String> = out.iter().filter(|l| l.starts_with("ERR")).collect();
        let preds: Vec<&String> = out.iter().filter(|l| l.starts_with("PRED")).collect();
        assert_eq!(errs.len(), 5);
        assert_eq!(preds.len(), 2);
        assert!(errs[0].starts_with("ERR 1 "));
        assert!(errs[1].starts_with("ERR 3 "), "got {}", errs[1]);
        assert!(errs[2].starts_with("ERR 4 "));
        assert!(errs[3].starts_with("ERR 5 "));
        assert!(errs[4].starts_with("ERR 6 "));
    }

    #[test]
    fn bye_closes_and_obs_reopens_fresh() {
        let input = "\
OBS a 100.0 0.0 0.0 0.0 1.0\n\
BYE a\n\
BYE a\n\
OBS a 50.0 0.0 0.0 0.0 1.0\n";
        let out = run(input, &cfg(1));
        // second BYE errors; the re-opened session accepts an older t
        let errs: Vec<&String> = out.iter().filter(|l| l.starts_with("ERR")).collect();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].starts_with("ERR 3 "));
        assert_eq!(out.iter().filter(|l| l.starts_with("PRED")).count(), 2);
    }

    #[test]
    fn gc_drops_idle_sessions() {
        let input = "\
OBS a 100.0 0.0 0.0 0.0 1.0\n\
OBS b 109.0 0.0 0.0 0.0 1.0\n\
OBS a 100.5 0.0 0.0 0.0 1.0\n";
        let mut c = cfg(1);
        c.gc_idle = Some(5.0);
        let out = run(input, &c);
        // session a was reaped by b's observation at t=109 (idle 9 s > 5 s),
        // so its third line re-opens at t=100.5 and still predicts fine.
        assert_eq!(out.iter().filter(|l| l.starts_with("PRED")).count(), 3);
        assert_eq!(out.iter().filter(|l| l.starts_with("ERR")).count(), 0);
    }

    #[test]
    fn sessions_with_same_input_agree() {
        let input = "\
OBS a 100.0 1.0 1.0 0.0 1.0\n\
OBS b 100.0 1.0 1.0 0.0 1.0\n";
        let out = run(input, &cfg(2));
        let a: Vec<&str> = out[0].split_whitespace().skip(2).collect();
        let b: Vec<&str> = out[2].split_whitespace().skip(2).collect();
        assert_eq!(a, b);
    }
}
