//! Iterative rollout prediction and per-track streaming sessions.
//!
//! A rollout feeds observed features through the model, then repeatedly
//! turns the latest Gaussian output into a concrete pose — either the
//! distribution mean or the mean of `n_samples` draws — and feeds that pose
//! back in as the next observation, extrapolating the clock by one interval
//! each step. Each tracked pedestrian owns an independent LSTM state inside
//! a [`SessionStore`], so streams can be advanced one observation at a time
//! with exactly the same arithmetic as a batch forward pass.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{
    step_prepared, GaussianPoseOutput, LstmState, ModelParams, ModelVars,
};
use crate::pose::Pose3Dof;
use crate::trajectory::{observation_features, apply_norm, FeatureVec, SECONDS_PER_DAY};

/// How a rollout turns a Gaussian output into the next position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Mean of `n_samples` draws from the predicted Gaussian.
    SampleMean,
    /// The distribution mean μ directly; deterministic, no sampling.
    DistributionMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub horizon_steps: usize,
    pub n_samples: usize,
    pub mode: RolloutMode,
    pub seed: u64,
}

impl RolloutConfig {
    /// Deterministic rollout along the distribution mean.
    pub fn distribution_mean(horizon_steps: usize) -> Self {
        RolloutConfig {
            horizon_steps,
            n_samples: 20,
            mode: RolloutMode::DistributionMean,
            seed: 0,
        }
    }

    /// Sampling rollout averaging 20 draws per step.
    pub fn sample_mean(horizon_steps: usize, seed: u64) -> Self {
        RolloutConfig {
            horizon_steps,
            n_samples: 20,
            mode: RolloutMode::SampleMean,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::Invalid("horizon must be at least 1 step".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Invalid("need at least 1 sample per step".into()));
        }
        Ok(())
    }
}

/// One predicted step, in world-frame units.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPose {
    /// 1-based steps past the last observation; the pose is for time
    /// `t_last + step * interval`.
    pub step: usize,
    pub pose: Pose3Dof,
    /// Gaussian position parameters behind this step, denormalized.
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    pub poses: Vec<PredictedPose>,
    /// Steps whose raw rotation output was numerically degenerate and fell
    /// back to the identity heading. Nonzero values of this belong in logs.
    pub degenerate_rotations: usize,
}

/// Mean of `n_samples` draws from the bivariate Gaussian `N(μ, Σ)` encoded
/// in `out`, via the Cholesky factor of Σ. Rejects parameters for which Σ
/// is not positive definite (σ ≤ 0 or |ρ| ≥ 1), which a healthy decoder
/// head cannot produce.
pub fn sample_position(
    out: &GaussianPoseOutput,
    n_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<[f64; 2]> {
    if n_samples == 0 {
        return Err(Error::Invalid("need at least 1 sample".into()));
    }
    let (mx, my, sx, sy, r) = (out.mu_x, out.mu_y, out.sigma_x, out.sigma_y, out.rho);
    if !(mx.is_finite() && my.is_finite() && sx.is_finite() && sy.is_finite() && r.is_finite()) {
        return Err(Error::Numeric("Gaussian parameters must be finite".into()));
    }
    if !(sx > 0.0 && sy > 0.0 && r.abs() < 1.0) {
        return Err(Error::Numeric(alloc::format!(
            "covariance not positive definite: sigma ({}, {}), rho {}",
            sx, sy, r
        )));
    }
    // Σ = [[σx², ρσxσy], [ρσxσy, σy²]] factors as L = [[σx, 0], [ρσy, σy√(1−ρ²)]].
    let tail = sy * math::sqrt(1.0 - r * r);
    let mut acc = [0.0f64; 2];
    for _ in 0..n_samples {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        acc[0] += mx + sx * z1;
        acc[1] += my + r * sy * z1 + tail * z2;
    }
    Ok([acc[0] / n_samples as f64, acc[1] / n_samples as f64])
}

/// Advances the split clock by one interval, rolling the seconds-of-day
/// over at midnight.
pub(crate) fn advance_time(t_day: f64, t_hms: f64, interval: f64) -> (f64, f64) {
    let mut day = t_day;
    let mut hms = t_hms + interval;
    while hms >= SECONDS_PER_DAY {
        hms -= SECONDS_PER_DAY;
        day += 1.0;
    }
    (day, hms)
}

fn norm_slot(v: f64, i: usize, p: &ModelParams) -> f64 {
    (v - p.norm.mean[i]) / p.norm.std[i]
}

fn denorm_slot(v: f64, i: usize, p: &ModelParams) -> f64 {
    v * p.norm.std[i] + p.norm.mean[i]
}

/// The core iteration: from a state and the Gaussian decoded at the last
/// observation, emit `horizon_steps` poses, feeding each one back in.
/// `t_day`/`t_hms` are the unnormalized clock of the last observation
/// (ignored when the model was trained without time features).
fn rollout_from(
    vars: &ModelVars<Matrix>,
    params: &ModelParams,
    mut state: LstmState,
    mut head: GaussianPoseOutput,
    mut t_day: f64,
    mut t_hms: f64,
    cfg: &RolloutConfig,
) -> Result<RolloutOutput> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut poses = Vec::with_capacity(cfg.horizon_steps);
    let mut degenerate = 0usize;
    for step in 1..=cfg.horizon_steps {
        let pos = match cfg.mode {
            RolloutMode::DistributionMean => [head.mu_x, head.mu_y],
            RolloutMode::SampleMean => sample_position(&head, cfg.n_samples, &mut rng)?,
        };
        let ((qz, qw), fell_back) = head.quat_canonical();
        if fell_back {
            degenerate += 1;
        }
        if params.use_time {
            let (d, h) = advance_time(t_day, t_hms, params.interval);
            t_day = d;
            t_hms = h;
        }
        let pose = Pose3Dof::new(
            denorm_slot(pos[0], 0, params),
            denorm_slot(pos[1], 1, params),
            qz,
            qw,
        )?;
        poses.push(PredictedPose {
            step,
            pose,
            mu: [
                denorm_slot(head.mu_x, 0, params),
                denorm_slot(head.mu_y, 1, params),
            ],
            sigma: [
                head.sigma_x * params.norm.std[0],
                head.sigma_y * params.norm.std[1],
            ],
            rho: head.rho,
        });
        let next: FeatureVec = [
            pos[0],
            pos[1],
            norm_slot(qz, 2, params),
            norm_slot(qw, 3, params),
            norm_slot(t_day, 4, params),
            norm_slot(t_hms, 5, params),
        ];
        let (s, h) = step_prepared(vars, params.layers, &state, &next);
        state = s;
        head = h;
    }
    Ok(RolloutOutput {
        poses,
        degenerate_rotations: degenerate,
    })
}

/// [`rollout`] against already-prepared parameter matrices, for callers
/// that run many rollouts of the same model.
pub(crate) fn rollout_prepared(
    vars: &ModelVars<Matrix>,
    params: &ModelParams,
    observed: &[FeatureVec],
    cfg: &RolloutConfig,
) -> Result<RolloutOutput> {
    cfg.validate()?;
    if observed.is_empty() {
        return Err(Error::Invalid(
            "rollout needs at least one observation".into(),
        ));
    }
    for f in observed {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("observation features must be finite".into()));
        }
    }
    let mut state = LstmState::zeros(params.layers, params.hidden, 1);
    let mut head = None;
    for f in observed {
        let (s, h) = step_prepared(vars, params.layers, &state, f);
        state = s;
        head = Some(h);
    }
    let last = observed.last().expect("non-empty");
    let (t_day, t_hms) = if params.use_time {
        (denorm_slot(last[4], 4, params), denorm_slot(last[5], 5, params))
    } else {
        (0.0, 0.0)
    };
    rollout_from(
        vars,
        params,
        state,
        head.expect("non-empty"),
        t_day,
        t_hms,
        cfg,
    )
}

/// Feeds a normalized observation sequence through a fresh state, then
/// rolls the model forward `cfg.horizon_steps` predictions.
pub fn rollout(
    params: &ModelParams,
    observed: &[FeatureVec],
    cfg: &RolloutConfig,
) -> Result<RolloutOutput> {
    rollout_prepared(&params.vars_eval(), params, observed, cfg)
}

/// Live per-pedestrian prediction state.
#[derive(Debug, Clone)]
pub struct TrackSession {
    pub track_id: String,
    pub state: LstmState,
    /// Timestamp of the newest observation; meaningless until the first one.
    pub last_seen: f64,
    pub observation_count: usize,
    last_head: Option<GaussianPoseOutput>,
    t_day: f64,
    t_hms: f64,
}

/// Holds one model and any number of independent track sessions. Parameters
/// are prepared once; every session advances with the same arithmetic as a
/// batch forward pass, so stream and batch results are bit-identical.
pub struct SessionStore {
    params: ModelParams,
    vars: ModelVars<Matrix>,
    sessions: BTreeMap<String, TrackSession>,
}

impl SessionStore {
    pub fn new(params: ModelParams) -> Self {
        let vars = params.vars_eval();
        SessionStore {
            params,
            vars,
            sessions: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn contains(&self, track_id: &str) -> bool {
        self.sessions.contains_key(track_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }

    /// Read-only view of one session, if it is open.
    pub fn session(&self, track_id: &str) -> Option<&TrackSession> {
        self.sessions.get(track_id)
    }

    /// Starts a fresh session with zeroed LSTM state.
    pub fn open(&mut self, track_id: &str) -> Result<()> {
        if self.sessions.contains_key(track_id) {
            return Err(Error::Invalid(alloc::format!(
                "session '{}' is already open",
                track_id
            )));
        }
        self.sessions.insert(
            String::from(track_id),
            TrackSession {
                track_id: String::from(track_id),
                state: LstmState::zeros(self.params.layers, self.params.hidden, 1),
                last_seen: f64::NEG_INFINITY,
                observation_count: 0,
                last_head: None,
                t_day: 0.0,
                t_hms: 0.0,
            },
        );
        Ok(())
    }

    /// Advances an open session by one observation. Timestamps must be
    /// finite and strictly increasing within a session.
    pub fn observe(&mut self, track_id: &str, t: f64, pose: &Pose3Dof) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Invalid("timestamp must be finite".into()));
        }
        let params = &self.params;
        let session = self.sessions.get_mut(track_id).ok_or_else(|| {
            Error::Invalid(alloc::format!("no open session '{}'", track_id))
        })?;
        if session.observation_count > 0 && t <= session.last_seen {
            return Err(Error::Invalid(alloc::format!(
                "timestamps must increase within a session: {} after {}",
                t, session.last_seen
            )));
        }
        let raw = observation_features(pose, t, params.use_time, params.day0);
        let feature = apply_norm(&raw, &params.norm);
        let (state, head) = step_prepared(&self.vars, params.layers, &session.state, &feature);
        session.state = state;
        session.last_head = Some(head);
        session.last_seen = t;
        session.observation_count += 1;
        session.t_day = raw[4];
        session.t_hms = raw[5];
        Ok(())
    }

    /// [`observe`](Self::observe), opening the session first if absent.
    /// Returns whether a new session was created.
    pub fn observe_or_open(&mut self, track_id: &str, t: f64, pose: &Pose3Dof) -> Result<bool> {
        let opened = if self.contains(track_id) {
            false
        } else {
            self.open(track_id)?;
            true
        };
        match self.observe(track_id, t, pose) {
            Ok(()) => Ok(opened),
            Err(e) => {
                if opened {
                    self.sessions.remove(track_id);
                }
                Err(e)
            }
        }
    }

    /// Rolls the session's model state forward without mutating it.
    pub fn predict(&self, track_id: &str, cfg: &RolloutConfig) -> Result<RolloutOutput> {
        let session = self.sessions.get(track_id).ok_or_else(|| {
            Error::Invalid(alloc::format!("no open session '{}'", track_id))
        })?;
        let head = session.last_head.clone().ok_or_else(|| {
            Error::Invalid(alloc::format!(
                "session '{}' has no observations yet",
                track_id
            ))
        })?;
        rollout_from(
            &self.vars,
            &self.params,
            session.state.clone(),
            head,
            session.t_day,
            session.t_hms,
            cfg,
        )
    }

    pub fn close(&mut self, track_id: &str) -> Result<()> {
        self.sessions.remove(track_id).map(|_| ()).ok_or_else(|| {
            Error::Invalid(alloc::format!("no open session '{}'", track_id))
        })
    }

    /// Drops sessions whose last observation is older than `max_idle`
    /// seconds before `now`; returns the closed track ids.
    pub fn gc(&mut self, now: f64, max_idle: f64) -> Vec<String> {
        let dead: Vec<String> = self
            .sessions
            .values()
            .filter(|s| now - s.last_seen > max_idle)
            .map(|s| s.track_id.clone())
            .collect();
        for id in &dead {
            self.sessions.remove(id);
        }
        dead
    }
}
