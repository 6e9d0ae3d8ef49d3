//! Trajectory forecast evaluation: average displacement error over
//! positions, average yaw error over headings, and the observation-length ×
//! prediction-length error grid, plus a constant-velocity baseline to beat.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::ModelParams;
use crate::pose::angle_between;
use crate::predict::{rollout_prepared, RolloutConfig};
use crate::trajectory::{apply_norm, extract_features, Dataset, TimestampedPose};

/// Mean Euclidean distance between paired positions, in the input's units.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Invalid(alloc::format!(
            "position sequences differ in length: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("cannot score empty sequences".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| math::hypot(p[0] - g[0], p[1] - g[1]))
        .sum();
    Ok(sum / pred.len() as f64)
}

fn quat_yaw(q: (f64, f64)) -> f64 {
    2.0 * math::atan2(q.0, q.1)
}

/// Mean yaw error in degrees between paired unit quaternions; per step the
/// error is the shorter arc between the two headings, so it lies in
/// [0°, 180°] and ignores quaternion sign.
pub fn aede(pred_q: &[(f64, f64)], gt_q: &[(f64, f64)]) -> Result<f64> {
    if pred_q.len() != gt_q.len() {
        return Err(Error::Invalid(alloc::format!(
            "heading sequences differ in length: {} vs {}",
            pred_q.len(),
            gt_q.len()
        )));
    }
    if pred_q.is_empty() {
        return Err(Error::Invalid("cannot score empty sequences".into()));
    }
    let sum: f64 = pred_q
        .iter()
        .zip(gt_q)
        .map(|(&p, &g)| angle_between(quat_yaw(p), quat_yaw(g)))
        .sum();
    Ok(sum / pred_q.len() as f64 * 180.0 / core::f64::consts::PI)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Observed steps before each prediction.
    pub obs_len: usize,
    /// Horizons (in steps) to report, each scored on the rollout prefix of
    /// that length.
    pub pred_horizons: Vec<usize>,
    /// Step length in seconds, for the report's time column.
    pub interval: f64,
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.obs_len == 0 {
            return Err(Error::Invalid("need at least 1 observed step".into()));
        }
        if self.pred_horizons.is_empty() || self.pred_horizons.contains(&0) {
            return Err(Error::Invalid(
                "prediction horizons must be a non-empty list of positive steps".into(),
            ));
        }
        if !(self.interval > 0.0) {
            return Err(Error::Invalid("interval must be positive".into()));
        }
        Ok(())
    }
}

/// Aggregated error at one prediction horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonError {
    pub horizon_steps: usize,
    pub horizon_seconds: f64,
    pub ade_m: f64,
    pub aede_deg: f64,
    /// Evaluation windows with enough ground truth for this horizon.
    pub windows: usize,
}

struct HorizonAccum {
    ade_sum: f64,
    aede_sum: f64,
    windows: usize,
}

/// Slides a window over every test trajectory (stride 1): observe
/// `obs_len` steps, roll the model out, and score each configured horizon
/// on every window that still has that much ground truth left. Longer
/// horizons therefore aggregate over fewer windows, and a horizon's score
/// is independent of which other horizons were requested.
pub fn evaluate(
    params: &ModelParams,
    ds_test: &Dataset,
    cfg: &EvalConfig,
    rollout_cfg: &RolloutConfig,
) -> Result<Vec<HorizonError>> {
    cfg.validate()?;
    let hmax = *cfg.pred_horizons.iter().max().expect("non-empty");
    let hmin = *cfg.pred_horizons.iter().min().expect("non-empty");
    let vars = params.vars_eval();
    let mut acc: Vec<HorizonAccum> = cfg
        .pred_horizons
        .iter()
        .map(|_| HorizonAccum {
            ade_sum: 0.0,
            aede_sum: 0.0,
            windows: 0,
        })
        .collect();

    for traj in &ds_test.trajectories {
        let feats: Vec<_> = extract_features(traj, params.use_time, params.day0)
            .iter()
            .map(|f| apply_norm(f, &params.norm))
            .collect();
        let n = feats.len();
        if n < cfg.obs_len + hmin {
            continue;
        }
        for s in 0..=(n - cfg.obs_len - hmin) {
            let avail = n - s - cfg.obs_len;
            let steps = avail.min(hmax);
            let mut rc = *rollout_cfg;
            rc.horizon_steps = steps;
            let out = rollout_prepared(&vars, params, &feats[s..s + cfg.obs_len], &rc)?;
            let pred_pos: Vec<[f64; 2]> =
                out.poses.iter().map(|p| [p.pose.x, p.pose.y]).collect();
            let pred_q: Vec<(f64, f64)> =
                out.poses.iter().map(|p| (p.pose.qz, p.pose.qw)).collect();
            let gt = &traj.samples[s + cfg.obs_len..s + cfg.obs_len + steps];
            let gt_pos: Vec<[f64; 2]> = gt.iter().map(|o| [o.pose.x, o.pose.y]).collect();
            let gt_q: Vec<(f64, f64)> = gt.iter().map(|o| (o.pose.qz, o.pose.qw)).collect();
            for (i, &h) in cfg.pred_horizons.iter().enumerate() {
                if h <= steps {
                    acc[i].ade_sum += ade(&pred_pos[..h], &gt_pos[..h])?;
                    acc[i].aede_sum += aede(&pred_q[..h], &gt_q[..h])?;
                    acc[i].windows += 1;
                }
            }
        }
    }

    if acc.iter().all(|a| a.windows == 0) {
        return Err(Error::Invalid(alloc::format!(
            "no test trajectory is long enough for {} observed + {} predicted steps",
            cfg.obs_len, hmin
        )));
    }
    Ok(cfg
        .pred_horizons
        .iter()
        .zip(&acc)
        .map(|(&h, a)| {
            let n = a.windows.max(1) as f64;
            HorizonError {
                horizon_steps: h,
                horizon_seconds: h as f64 * cfg.interval,
                ade_m: a.ade_sum / n,
                aede_deg: a.aede_sum / n,
                windows: a.windows,
            }
        })
        .collect())
}

/// Position error as a function of both observation length (rows, 1..=A)
/// and prediction length (columns, 1..=B): entry (a, b) is the mean
/// positional error over all windows that observe `a` steps and have `b`
/// steps of ground truth ahead. Errors if some cell gets no window at all.
pub fn evaluate_grid(
    params: &ModelParams,
    ds_test: &Dataset,
    obs_max: usize,
    pred_max: usize,
    rollout_cfg: &RolloutConfig,
) -> Result<Matrix> {
    if obs_max == 0 || pred_max == 0 {
        return Err(Error::Invalid("grid ranges must be at least 1".into()));
    }
    let vars = params.vars_eval();
    let mut sums = Matrix::zeros(obs_max, pred_max);
    let mut counts = Matrix::zeros(obs_max, pred_max);

    let feats_all: Vec<Vec<_>> = ds_test
        .trajectories
        .iter()
        .map(|traj| {
            extract_features(traj, params.use_time, params.day0)
                .iter()
                .map(|f| apply_norm(f, &params.norm))
                .collect()
        })
        .collect();

    for a in 1..=obs_max {
        for (traj, feats) in ds_test.trajectories.iter().zip(&feats_all) {
            let n = feats.len();
            if n < a + 1 {
                continue;
            }
            for s in 0..=(n - a - 1) {
                let steps = (n - s - a).min(pred_max);
                let mut rc = *rollout_cfg;
                rc.horizon_steps = steps;
                let out = rollout_prepared(&vars, params, &feats[s..s + a], &rc)?;
                let gt = &traj.samples[s + a..s + a + steps];
                let mut dist_sum = 0.0;
                for b in 1..=steps {
                    let p = &out.poses[b - 1].pose;
                    let g = &gt[b - 1].pose;
                    dist_sum += math::hypot(p.x - g.x, p.y - g.y);
                    let cell_ade = dist_sum / b as f64;
                    sums.set(a - 1, b - 1, sums.get(a - 1, b - 1) + cell_ade);
                    counts.set(a - 1, b - 1, counts.get(a - 1, b - 1) + 1.0);
                }
            }
        }
    }

    let mut grid = Matrix::zeros(obs_max, pred_max);
    for a in 0..obs_max {
        for b in 0..pred_max {
            let c = counts.get(a, b);
            if c == 0.0 {
                return Err(Error::Invalid(alloc::format!(
                    "no window supports observing {} and predicting {} steps",
                    a + 1, b + 1
                )));
            }
            grid.set(a, b, sums.get(a, b) / c);
        }
    }
    Ok(grid)
}

/// Linear extrapolation of the last observed displacement: prediction k is
/// `last + k·(last − second_last)`.
pub fn constant_velocity_baseline(
    observed: &[TimestampedPose],
    horizon: usize,
) -> Result<Vec<[f64; 2]>> {
    if observed.len() < 2 {
        return Err(Error::Invalid(
            "constant-velocity extrapolation needs at least 2 observations".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1 step".into()));
    }
    let last = &observed[observed.len() - 1].pose;
    let prev = &observed[observed.len() - 2].pose;
    let (dx, dy) = (last.x - prev.x, last.y - prev.y);
    Ok((1..=horizon)
        .map(|k| [last.x + k as f64 * dx, last.y + k as f64 * dy])
        .collect())
}

/// [`evaluate`] for the constant-velocity baseline over the same window
/// protocol: positions extrapolate linearly, the heading persists from the
/// last observation. `obs_len` must be ≥ 2.
pub fn evaluate_constant_velocity(
    ds_test: &Dataset,
    cfg: &EvalConfig,
) -> Result<Vec<HorizonError>> {
    cfg.validate()?;
    if cfg.obs_len < 2 {
        return Err(Error::Invalid(
            "constant-velocity evaluation needs obs_len >= 2".into(),
        ));
    }
    let hmax = *cfg.pred_horizons.iter().max().expect("non-empty");
    let hmin = *cfg.pred_horizons.iter().min().expect("non-empty");
    let mut acc: Vec<HorizonAccum> = cfg
        .pred_horizons
        .iter()
        .map(|_| HorizonAccum {
            ade_sum: 0.0,
            aede_sum: 0.0,
            windows: 0,
        })
        .collect();

    for traj in &ds_test.trajectories {
        let n = traj.samples.len();
        if n < cfg.obs_len + hmin {
            continue;
        }
        for s in 0..=(n - cfg.obs_len - hmin) {
            let steps = (n - s - cfg.obs_len).min(hmax);
            let obs = &traj.samples[s..s + cfg.obs_len];
            let pred_pos = constant_velocity_baseline(obs, steps)?;
            let held = (obs[obs.len() - 1].pose.qz, obs[obs.len() - 1].pose.qw);
            let pred_q: Vec<(f64, f64)> = (0..steps).map(|_| held).collect();
            let gt = &traj.samples[s + cfg.obs_len..s + cfg.obs_len + steps];
            let gt_pos: Vec<[f64; 2]> = gt.iter().map(|o| [o.pose.x, o.pose.y]).collect();
            let gt_q: Vec<(f64, f64)> = gt.iter().map(|o| (o.pose.qz, o.pose.qw)).collect();
            for (i, &h) in cfg.pred_horizons.iter().enumerate() {
                if h <= steps {
                    acc[i].ade_sum += ade(&pred_pos[..h], &gt_pos[..h])?;
                    acc[i].aede_sum += aede(&pred_q[..h], &gt_q[..h])?;
                    acc[i].windows += 1;
                }
            }
        }
    }

    if acc.iter().all(|a| a.windows == 0) {
        return Err(Error::Invalid(alloc::format!(
            "no test trajectory is long enough for {} observed + {} predicted steps",
            cfg.obs_len, hmin
        )));
    }
    Ok(cfg
        .pred_horizons
        .iter()
        .zip(&acc)
        .map(|(&h, a)| {
            let n = a.windows.max(1) as f64;
            HorizonError {
                horizon_steps: h,
                horizon_seconds: h as f64 * cfg.interval,
                ade_m: a.ade_sum / n,
                aede_deg: a.aede_sum / n,
                windows: a.windows,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{quat_from_yaw, Pose3Dof};
    use crate::synth::{generate_synthetic, ScenarioSpec};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn ade_hand_oracles() {
        let p = vec![[3.0, 4.0], [1.0, 1.0]];
        let g = vec![[0.0, 0.0], [1.0, 1.0]];
        // 3-4-5 triangle then a hit: (5 + 0) / 2
        assert!((ade(&p, &g).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(ade(&g, &g).unwrap(), 0.0);
        assert!((ade(&[[0.0, 1.0]], &[[0.0, 0.0]]).unwrap() - 1.0).abs() < 1e-15);
        assert!(ade(&p, &g[..1]).is_err());
        assert!(ade(&[], &[]).is_err());
    }

    #[test]
    fn aede_hand_oracles() {
        let deg = core::f64::consts::PI / 180.0;
        // 10° vs 350° wraps to 20°, not 340°.
        let p = vec![quat_from_yaw(10.0 * deg)];
        let g = vec![quat_from_yaw(350.0 * deg)];
        assert!((aede(&p, &g).unwrap() - 20.0).abs() < 1e-9);
        // quarter turn
        let p = vec![(0.0, 1.0)];
        let g = vec![quat_from_yaw(90.0 * deg)];
        assert!((aede(&p, &g).unwrap() - 90.0).abs() < 1e-9);
        assert_eq!(aede(&g, &g).unwrap(), 0.0);
        assert!(aede(&p, &[]).is_err());
    }

    #[test]
    fn aede_ignores_quaternion_sign() {
        let q = quat_from_yaw(1.234);
        let flipped = vec![(-q.0, -q.1)];
        let g = vec![quat_from_yaw(0.3)];
        let a = aede(&vec![q], &g).unwrap();
        let b = aede(&flipped, &g).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ade_is_translation_and_rotation_invariant(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..20),
            dx in -100.0f64..100.0,
            dy in -100.0f64..100.0,
            th in -3.14f64..3.14,
        ) {
            let pred: Vec<[f64;2]> = pts.iter().map(|p| [p.0, p.1]).collect();
            let gt: Vec<[f64;2]> = pts.iter().map(|p| [p.2, p.3]).collect();
            let base = ade(&pred, &gt).unwrap();
            let shift = |v: &[[f64;2]]| -> Vec<[f64;2]> {
                v.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()
            };
            let rot = |v: &[[f64;2]]| -> Vec<[f64;2]> {
                let (s, c) = (th.sin(), th.cos());
                v.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect()
            };
            prop_assert!((ade(&shift(&pred), &shift(&gt)).unwrap() - base).abs() < 1e-9);
            prop_assert!((ade(&rot(&pred), &rot(&gt)).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn aede_is_invariant_under_global_rotation_and_sign(
            yaws in proptest::collection::vec((-3.14f64..3.14, -3.14f64..3.14), 1..20),
            th in -3.14f64..3.14,
            flip_pred: bool,
            flip_gt: bool,
        ) {
            let pred: Vec<(f64,f64)> = yaws.iter().map(|y| quat_from_yaw(y.0)).collect();
            let gt: Vec<(f64,f64)> = yaws.iter().map(|y| quat_from_yaw(y.1)).collect();
            let base = aede(&pred, &gt).unwrap();
            prop_assert!((0.0..=180.0 + 1e-9).contains(&base));
            let turn = |v: &[(f64,f64)], flip: bool| -> Vec<(f64,f64)> {
                v.iter().map(|&q| {
                    let q2 = quat_from_yaw(crate::pose::wrap_angle(2.0 * crate::math::atan2(q.0, q.1) + th));
                    if flip { (-q2.0, -q2.1) } else { q2 }
                }).collect()
            };
            let moved = aede(&turn(&pred, flip_pred), &turn(&gt, flip_gt)).unwrap();
            prop_assert!((moved - base).abs() < 1e-9, "base {} moved {}", base, moved);
        }
    }

    #[test]
    fn constant_velocity_extrapolates_the_last_step() {
        let mk = |x: f64, y: f64, t: f64| TimestampedPose {
            t,
            pose: Pose3Dof::new(x, y, 0.0, 1.0).unwrap(),
        };
        let obs = vec![mk(5.0, 5.0, 0.0), mk(0.0, 0.0, 1.0), mk(1.0, 0.0, 2.0)];
        let p = constant_velocity_baseline(&obs, 3).unwrap();
        assert_eq!(p, vec![[2.0, 0.0], [3.0, 0.0], [4.0, 0.0]]);
        // stationary: repeats the last position
        let obs = vec![mk(2.0, 3.0, 0.0), mk(2.0, 3.0, 1.0)];
        assert_eq!(
            constant_velocity_baseline(&obs, 2).unwrap(),
            vec![[2.0, 3.0], [2.0, 3.0]]
        );
        assert!(constant_velocity_baseline(&obs[..1], 1).is_err());
    }

    fn line_dataset() -> Dataset {
        let spec = ScenarioSpec {
            walkers: 4,
            waypoints: vec![[0.0, 0.0], [20.0, 0.0]],
            speed_min: 1.0,
            speed_max: 1.0,
            noise_sigma: 0.0,
            interval: 1.0,
            days: 1,
            start_hms_min: 1000.0,
            start_hms_max: 2000.0,
            schedule: None,
        };
        generate_synthetic(&spec, 11).unwrap()
    }

    #[test]
    fn constant_velocity_is_exact_on_straight_lines() {
        let ds = line_dataset();
        let cfg = EvalConfig {
            obs_len: 3,
            pred_horizons: vec![1, 2, 4],
            interval: 1.0,
        };
        let report = evaluate_constant_velocity(&ds, &cfg).unwrap();
        assert_eq!(report.len(), 3);
        for h in &report {
            assert!(h.ade_m < 1e-9, "horizon {} ade {}", h.horizon_steps, h.ade_m);
            assert!(h.aede_deg < 1e-9);
            assert!(h.windows > 0);
            assert!((h.horizon_seconds - h.horizon_steps as f64).abs() < 1e-12);
        }
        // deeper horizons cannot have more windows
        assert!(report[0].windows >= report[1].windows);
        assert!(report[1].windows >= report[2].windows);
    }

    #[test]
    fn evaluate_reports_one_row_per_horizon_and_is_prefix_consistent() {
        let ds = line_dataset();
        let params = ModelParams::init_sized(2, 1, false, 8).unwrap();
        let mut params = params;
        params.interval = 1.0;
        params.day0 = ds.epoch_day();
        params.norm = crate::trajectory::fit_norm_stats(&ds, false).unwrap();
        let rc = RolloutConfig::distribution_mean(1);
        let cfg_all = EvalConfig {
            obs_len: 2,
            pred_horizons: vec![1, 2, 3],
            interval: 1.0,
        };
        let all = evaluate(&params, &ds, &cfg_all, &rc).unwrap();
        assert_eq!(all.len(), 3);
        let cfg_one = EvalConfig {
            obs_len: 2,
            pred_horizons: vec![2],
            interval: 1.0,
        };
        let one = evaluate(&params, &ds, &cfg_one, &rc).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], all[1]);
    }

    #[test]
    fn evaluate_errors_when_nothing_qualifies() {
        let ds = line_dataset();
        let mut params = ModelParams::init_sized(2, 1, false, 8).unwrap();
        params.interval = 1.0;
        params.day0 = ds.epoch_day();
        params.norm = crate::trajectory::fit_norm_stats(&ds, false).unwrap();
        let cfg = EvalConfig {
            obs_len: 1000,
            pred_horizons: vec![1],
            interval: 1.0,
        };
        assert!(evaluate(&params, &ds, &cfg, &RolloutConfig::distribution_mean(1)).is_err());
        let cfg = EvalConfig {
            obs_len: 0,
            pred_horizons: vec![1],
            interval: 1.0,
        };
        assert!(evaluate(&params, &ds, &cfg, &RolloutConfig::distribution_mean(1)).is_err());
    }

    #[test]
    fn grid_has_requested_shape_and_nonnegative_entries() {
        let ds = line_dataset();
        let mut params = ModelParams::init_sized(2, 1, false, 8).unwrap();
        params.interval = 1.0;
        params.day0 = ds.epoch_day();
        params.norm = crate::trajectory::fit_norm_stats(&ds, false).unwrap();
        let rc = RolloutConfig::distribution_mean(1);
        let grid = evaluate_grid(&params, &ds, 3, 4, &rc).unwrap();
        assert_eq!(grid.shape(), (3, 4));
        for &v in grid.data() {
            assert!(v >= 0.0 && v.is_finite());
        }
        // far beyond the data: some cell must be unsupported
        assert!(evaluate_grid(&params, &ds, 100, 100, &rc).is_err());
    }
}
