//! Trajectories, datasets, time features, normalization and splitting.
//!
//! A trajectory is one pedestrian's time-stamped pose sequence. Model input
//! features per sample are `[x, y, qz, qw, t_day, t_hms]`: position [m],
//! heading quaternion, day index relative to the dataset epoch, and seconds
//! into the day. Time features give the model its temporal context; they are
//! zeroed when temporal context is disabled so the input width is constant.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::pose::{interp_yaw, Pose3Dof};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Model input feature vector: x, y, qz, qw, t_day, t_hms.
pub type FeatureVec = [f64; 6];

/// One raw ingested observation, before grouping into trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub track_id: String,
    /// Time [s] since the unix epoch (or any fixed epoch).
    pub t: f64,
    pub pose: Pose3Dof,
}

/// A pose with its timestamp [s].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampedPose {
    pub t: f64,
    pub pose: Pose3Dof,
}

/// One pedestrian's observed path, samples sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: String,
    pub samples: Vec<TimestampedPose>,
    /// Sampling interval [s]; 0 means raw (not on a uniform grid).
    pub interval: f64,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.samples.first().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-feature normalization statistics (population mean / std).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl NormStats {
    /// Identity transform (mean 0, std 1).
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; 6],
            std: [1.0; 6],
        }
    }
}

/// A set of trajectories sharing one sampling interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    /// Normalization fitted on this data, if any has been attached.
    pub norm: Option<NormStats>,
    /// Sampling interval [s]; 0 means raw.
    pub interval: f64,
}

impl Dataset {
    /// Groups records by track id (keeping first-appearance order), sorts
    /// each group by time, and rejects duplicate timestamps within a track.
    pub fn from_records(records: Vec<PoseRecord>) -> Result<Dataset> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<TimestampedPose>> = BTreeMap::new();
        for rec in records {
            if !groups.contains_key(&rec.track_id) {
                order.push(rec.track_id.clone());
            }
            groups.entry(rec.track_id).or_default().push(TimestampedPose {
                t: rec.t,
                pose: rec.pose,
            });
        }
        let mut trajectories = Vec::with_capacity(order.len());
        for id in order {
            let mut samples = groups.remove(&id).expect("group exists");
            samples.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("finite timestamps"));
            for pair in samples.windows(2) {
                if pair[0].t == pair[1].t {
                    return Err(Error::Invalid(alloc::format!(
                        "track {} has duplicate timestamp {}",
                        id,
                        pair[0].t
                    )));
                }
            }
            trajectories.push(Trajectory {
                track_id: id,
                samples,
                interval: 0.0,
            });
        }
        Ok(Dataset {
            trajectories,
            norm: None,
            interval: 0.0,
        })
    }

    /// Day index of the earliest sample; the epoch all day-index features
    /// are measured against.
    pub fn epoch_day(&self) -> i64 {
        self.trajectories
            .iter()
            .filter_map(|tr| tr.samples.first())
            .map(|s| epoch_day(s.t))
            .min()
            .unwrap_or(0)
    }

    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Resamples every trajectory onto a uniform grid, dropping those that
    /// end up shorter than 2 samples. Returns the new dataset and the
    /// number of dropped trajectories.
    pub fn resample_all(&self, interval: f64) -> Result<(Dataset, usize)> {
        if !(interval > 0.0) {
            return Err(Error::Invalid(alloc::format!(
                "resample interval must be positive, got {}",
                interval
            )));
        }
        let mut out = Vec::new();
        let mut dropped = 0usize;
        for tr in &self.trajectories {
            match resample(tr, interval) {
                Ok(r) => out.push(r),
                Err(_) => dropped += 1,
            }
        }
        Ok((
            Dataset {
                trajectories: out,
                norm: self.norm.clone(),
                interval,
            },
            dropped,
        ))
    }
}

/// Day index of a timestamp (floor of days since the epoch).
pub fn epoch_day(t: f64) -> i64 {
    math::floor(t / SECONDS_PER_DAY) as i64
}

/// Day-relative time features of a timestamp: (day index - day0, seconds
/// into the day).
pub fn time_features(t: f64, day0: i64) -> (f64, f64) {
    let day = epoch_day(t);
    let hms = t - (day as f64) * SECONDS_PER_DAY;
    ((day - day0) as f64, hms)
}

/// Linear resampling of one trajectory onto `t0 + k*interval`. Positions
/// interpolate linearly, headings along the shorter arc. Timestamps already
/// on the grid pass through exactly. Fails if fewer than 2 grid points fit.
pub fn resample(traj: &Trajectory, interval: f64) -> Result<Trajectory> {
    if !(interval > 0.0) {
        return Err(Error::Invalid(alloc::format!(
            "resample interval must be positive, got {}",
            interval
        )));
    }
    if traj.samples.len() < 2 {
        return Err(Error::Invalid(alloc::format!(
            "track {} has {} samples, need at least 2 to resample",
            traj.track_id,
            traj.samples.len()
        )));
    }
    let t0 = traj.samples[0].t;
    let t_end = traj.samples[traj.samples.len() - 1].t;
    let mut samples = Vec::new();
    let mut seg = 0usize; // index of segment start; queries are monotone
    let mut k = 0usize;
    loop {
        let tq = t0 + (k as f64) * interval;
        if tq > t_end + 1e-9 {
            break;
        }
        let tq = tq.min(t_end);
        while seg + 2 < traj.samples.len() && traj.samples[seg + 1].t <= tq {
            seg += 1;
        }
        let a = &traj.samples[seg];
        let b = &traj.samples[seg + 1];
        let f = if tq <= a.t {
            0.0
        } else if tq >= b.t {
            1.0
        } else {
            (tq - a.t) / (b.t - a.t)
        };
        let pose = if f == 0.0 {
            a.pose
        } else if f == 1.0 {
            b.pose
        } else {
            Pose3Dof::from_yaw(
                a.pose.x + f * (b.pose.x - a.pose.x),
                a.pose.y + f * (b.pose.y - a.pose.y),
                interp_yaw(a.pose.yaw(), b.pose.yaw(), f),
            )
        };
        samples.push(TimestampedPose { t: tq, pose });
        k += 1;
    }
    if samples.len() < 2 {
        return Err(Error::Invalid(alloc::format!(
            "track {} spans {}s, shorter than one {}s interval",
            traj.track_id,
            t_end - t0,
            interval
        )));
    }
    Ok(Trajectory {
        track_id: traj.track_id.clone(),
        samples,
        interval,
    })
}

/// Model input features for one observation. With `use_time` false the two
/// time slots are zero, keeping the input width fixed.
pub fn observation_features(pose: &Pose3Dof, t: f64, use_time: bool, day0: i64) -> FeatureVec {
    let (t_day, t_hms) = if use_time {
        time_features(t, day0)
    } else {
        (0.0, 0.0)
    };
    [pose.x, pose.y, pose.qz, pose.qw, t_day, t_hms]
}

/// Model input features for each sample of a trajectory.
pub fn extract_features(traj: &Trajectory, use_time: bool, day0: i64) -> Vec<FeatureVec> {
    traj.samples
        .iter()
        .map(|s| observation_features(&s.pose, s.t, use_time, day0))
        .collect()
}

/// Population mean/std of every feature over all samples in the dataset.
/// Features with std below 1e-8 get std 1 so normalization stays finite.
pub fn fit_norm_stats(ds: &Dataset, use_time: bool) -> Result<NormStats> {
    let n = ds.n_samples();
    if n == 0 {
        return Err(Error::Invalid("cannot fit normalization on empty dataset".into()));
    }
    let day0 = ds.epoch_day();
    let mut mean = [0.0f64; 6];
    let mut m2 = [0.0f64; 6];
    for tr in &ds.trajectories {
        for f in extract_features(tr, use_time, day0) {
            for i in 0..6 {
                mean[i] += f[i];
                m2[i] += f[i] * f[i];
            }
        }
    }
    let nf = n as f64;
    let mut std = [1.0f64; 6];
    for i in 0..6 {
        mean[i] /= nf;
        let var = (m2[i] / nf - mean[i] * mean[i]).max(0.0);
        let s = math::sqrt(var);
        std[i] = if s < 1e-8 { 1.0 } else { s };
    }
    Ok(NormStats { mean, std })
}

/// `(f - mean) / std` per feature.
pub fn apply_norm(f: &FeatureVec, stats: &NormStats) -> FeatureVec {
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = (f[i] - stats.mean[i]) / stats.std[i];
    }
    out
}

/// Inverse of [`apply_norm`].
pub fn invert_norm(f: &FeatureVec, stats: &NormStats) -> FeatureVec {
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = f[i] * stats.std[i] + stats.mean[i];
    }
    out
}

/// Splits trajectories into train/test. Trajectories are ordered by start
/// time, shuffled with a seeded generator, and the first round(n*fraction)
/// go to the train side; both sides are returned in start-time order.
/// Deterministic for a given (dataset, fraction, seed).
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Invalid(alloc::format!(
            "train fraction must be in [0, 1], got {}",
            train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..ds.trajectories.len()).collect();
    idx.sort_by(|&a, &b| {
        ds.trajectories[a]
            .start_time()
            .partial_cmp(&ds.trajectories[b].start_time())
            .expect("finite start times")
    });
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = math::round(ds.trajectories.len() as f64 * train_fraction) as usize;
    let (mut train_idx, mut test_idx) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |ids: &[usize]| Dataset {
        trajectories: ids.iter().map(|&i| ds.trajectories[i].clone()).collect(),
        norm: ds.norm.clone(),
        interval: ds.interval,
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}
