//! Two-stage trainer: fixed-length windows first (stable early updates),
//! then variable-length windows so the model sees sequence lengths it will
//! meet in deployment. RMSProp with gradient-norm clipping and per-epoch
//! exponential learning-rate decay; the decay restarts at each stage.
//!
//! Training is bit-deterministic for a given (dataset, config): one seeded
//! generator drives window shuffling, stage-2 length draws and batch
//! sampling in a fixed order, and all arithmetic is sequential.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::loss::{nll_on_tape, reg_on_tape, rot_on_tape, BatchMask, LossBreakdown};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{step_vars, ModelParams, StateVars, TapeEngine, INPUT};
use crate::pose::canonicalize_quat;
use crate::tape::Tape;
use crate::trajectory::{apply_norm, extract_features, fit_norm_stats, Dataset, FeatureVec};

/// Stage 1: every window has the same input length.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub seq_len: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub decay: f64,
}

/// Stage 2: each batch draws its window length uniformly from a range.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub len_min: usize,
    pub len_max: usize,
    pub epochs: usize,
    pub lr: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: usize,
    /// Hidden width; the default 128 is what deployment uses, tests shrink it.
    pub hidden: usize,
    pub use_time: bool,
    pub batch_size: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    /// L2 regularization strength.
    pub lambda: f64,
    /// Whether regularization also covers biases.
    pub reg_biases: bool,
    /// RMSProp cache decay.
    pub rms_decay: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 1,
            hidden: crate::model::HIDDEN,
            use_time: false,
            batch_size: 128,
            stage1: Stage1Config {
                seq_len: 20,
                epochs: 100,
                lr: 0.005,
                decay: 0.98,
            },
            stage2: Stage2Config {
                len_min: 8,
                len_max: 20,
                epochs: 100,
                lr: 0.003,
                decay: 0.98,
            },
            lambda: 0.005,
            reg_biases: false,
            rms_decay: 0.9,
            epsilon: 1e-8,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Named configurations for the two benchmark-style setups: "strands"
    /// (single layer, 1 s interval data) and "lcas" (triple layer, 0.4 s
    /// interval data, longer stage-1 windows).
    pub fn preset(name: &str) -> Result<TrainConfig> {
        match name {
            "strands" => Ok(TrainConfig::default()),
            "lcas" => Ok(TrainConfig {
                layers: 3,
                stage1: Stage1Config {
                    seq_len: 30,
                    epochs: 100,
                    lr: 0.005,
                    decay: 0.98,
                },
                stage2: Stage2Config {
                    len_min: 10,
                    len_max: 20,
                    epochs: 100,
                    lr: 0.003,
                    decay: 0.98,
                },
                ..TrainConfig::default()
            }),
            other => Err(Error::Invalid(alloc::format!(
                "unknown preset '{}'; known: strands, lcas",
                other
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers != 1 && self.layers != 3 {
            return Err(Error::Invalid("layers must be 1 or 3".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if self.stage1.seq_len < 2 || self.stage2.len_min < 2 {
            return Err(Error::Invalid("window lengths must be at least 2".into()));
        }
        if self.stage2.len_min > self.stage2.len_max {
            return Err(Error::Invalid("stage-2 length range is inverted".into()));
        }
        for (stage, lr, decay) in [
            ("stage 1", self.stage1.lr, self.stage1.decay),
            ("stage 2", self.stage2.lr, self.stage2.decay),
        ] {
            if !(lr > 0.0) || !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::Invalid(alloc::format!(
                    "{} needs lr > 0 and decay in (0, 1], got lr {} decay {}",
                    stage, lr, decay
                )));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Invalid("lambda must be non-negative".into()));
        }
        if !(self.rms_decay >= 0.0 && self.rms_decay < 1.0) {
            return Err(Error::Invalid("rms decay must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid("epsilon must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Invalid("gradient clip must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training window: shift-by-one input/target pairs of normalized
/// features, so `targets[k]` is the observation after `inputs[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub inputs: Vec<FeatureVec>,
    pub targets: Vec<FeatureVec>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Cuts every feature sequence into non-overlapping windows of input length
/// `seq_len`; a remainder (or a whole sequence shorter than seq_len+1
/// samples) becomes one full-length shorter window. Sequences with fewer
/// than 3 samples are skipped. The result is shuffled with `rng`.
/// Errors if no sequence yields a window.
pub fn make_training_windows(
    feats: &[Vec<FeatureVec>],
    seq_len: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Window>> {
    if seq_len < 2 {
        return Err(Error::Invalid(alloc::format!(
            "window length must be at least 2, got {}",
            seq_len
        )));
    }
    let mut windows = Vec::new();
    for seq in feats {
        let m = seq.len();
        if m < 3 {
            continue;
        }
        let mut s = 0usize;
        while m - s >= seq_len + 1 {
            windows.push(Window {
                inputs: seq[s..s + seq_len].to_vec(),
                targets: seq[s + 1..s + seq_len + 1].to_vec(),
            });
            s += seq_len;
        }
        let r = m - s;
        if r >= 3 {
            windows.push(Window {
                inputs: seq[s..m - 1].to_vec(),
                targets: seq[s + 1..m].to_vec(),
            });
        }
    }
    if windows.is_empty() {
        return Err(Error::Invalid(
            "no trajectory has the 3+ samples needed to form a training window".into(),
        ));
    }
    use rand::seq::SliceRandom;
    windows.shuffle(rng);
    Ok(windows)
}

/// Number of windows [`make_training_windows`] would produce, without
/// building them.
fn count_windows(feat_lens: &[usize], seq_len: usize) -> usize {
    let mut n = 0usize;
    for &m in feat_lens {
        if m < 3 {
            continue;
        }
        let full = (m - 1) / seq_len;
        n += full;
        if m - full * seq_len >= 3 {
            n += 1;
        }
    }
    n
}

/// RMSProp accumulator, one cache matrix per parameter block.
#[derive(Debug, Clone)]
pub struct RmsPropState {
    cache: Vec<Matrix>,
}

impl RmsPropState {
    pub fn zeros(params: &ModelParams) -> Self {
        RmsPropState {
            cache: params
                .param_matrices()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }
}

const BLOCK_NAMES: [&str; 12] = [
    "embedding weights",
    "embedding bias",
    "input gate weights",
    "forget gate weights",
    "output gate weights",
    "cell gate weights",
    "input gate bias",
    "forget gate bias",
    "output gate bias",
    "cell gate bias",
    "decoder weights",
    "decoder bias",
];

/// One RMSProp update: clips the global gradient norm at `grad_clip` (0
/// disables), updates `cache = d*cache + (1-d)*g^2` and applies
/// `p -= lr * g / (sqrt(cache) + eps)`. Zero gradients leave parameters
/// bit-identical. Errors on non-finite gradients, naming the block.
pub fn rmsprop_step(
    params: &mut ModelParams,
    grads: &[Matrix],
    state: &mut RmsPropState,
    lr: f64,
    rms_decay: f64,
    epsilon: f64,
    grad_clip: f64,
) -> Result<()> {
    if grads.len() != 12 {
        return Err(Error::Invalid(alloc::format!(
            "expected 12 gradient blocks, got {}",
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric(alloc::format!(
                "non-finite gradient in {}",
                BLOCK_NAMES[i]
            )));
        }
    }
    let norm_sq: f64 = grads.iter().map(|g| g.frob_sq()).sum();
    let norm = math::sqrt(norm_sq);
    let scale = if grad_clip > 0.0 && norm > grad_clip {
        grad_clip / norm
    } else {
        1.0
    };
    for (i, p) in params.param_matrices_mut().into_iter().enumerate() {
        if p.shape() != grads[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "rmsprop_step",
                lhs: p.shape(),
                rhs: grads[i].shape(),
            });
        }
        let cache = &mut state.cache[i];
        for ((pv, cv), gv) in p
            .data_mut()
            .iter_mut()
            .zip(cache.data_mut())
            .zip(grads[i].data())
        {
            let g = gv * scale;
            *cv = rms_decay * *cv + (1.0 - rms_decay) * g * g;
            *pv -= lr * g / (math::sqrt(*cv) + epsilon);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// Epoch index within its stage.
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    /// Mean position NLL over the epoch's live samples.
    pub nll: f64,
    /// Mean rotation loss over the epoch's live samples.
    pub rot: f64,
    /// Mean regularization term over the epoch's batches.
    pub reg: f64,
    pub total: f64,
}

/// Computes the masked batch loss and its gradients with respect to the
/// twelve parameter blocks (same order as [`ModelParams::param_matrices`]),
/// without touching the parameters. `windows` must be non-empty batches of
/// normalized features cut by [`make_training_windows`].
pub fn batch_loss_and_grads(
    params: &ModelParams,
    windows: &[Window],
    lambda: f64,
    reg_biases: bool,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let b = windows.len();
    let t_max = windows.iter().map(|w| w.len()).max().expect("non-empty batch");
    let lengths: Vec<usize> = windows.iter().map(|w| w.len()).collect();
    let mask = BatchMask::from_lengths(&lengths, t_max)?;

    let mut tape = Tape::new();
    let (vars, ids) = params.vars_on_tape(&mut tape);
    let mut state = StateVars {
        c: (0..params.layers)
            .map(|_| tape.leaf(Matrix::zeros(b, params.hidden)))
            .collect(),
        h: (0..params.layers)
            .map(|_| tape.leaf(Matrix::zeros(b, params.hidden)))
            .collect(),
    };

    let mut nll_acc = None;
    let mut rot_acc = None;
    for t in 0..t_max {
        let mut x = Matrix::zeros(b, INPUT);
        let mut gt_xy = Matrix::zeros(b, 2);
        let mut gt_q = Matrix::zeros(b, 2);
        for (row, w) in windows.iter().enumerate() {
            if t < w.len() {
                x.row_mut(row).copy_from_slice(&w.inputs[t]);
                let tgt = &w.targets[t];
                gt_xy.set(row, 0, tgt[0]);
                gt_xy.set(row, 1, tgt[1]);
                // Targets are normalized features; the rotation loss wants
                // the actual unit heading, so undo the quaternion slots.
                let qz = tgt[2] * params.norm.std[2] + params.norm.mean[2];
                let qw = tgt[3] * params.norm.std[3] + params.norm.mean[3];
                let (cz, cw) = canonicalize_quat(qz, qw).map_err(|_| {
                    Error::Numeric(alloc::format!(
                        "target heading degenerate at sequence {}, step {}",
                        row, t
                    ))
                })?;
                gt_q.set(row, 0, cz);
                gt_q.set(row, 1, cw);
            } else {
                gt_q.set(row, 1, 1.0); // placeholder identity, masked out
            }
        }
        let xv = tape.leaf(x);
        let gt_xy_v = tape.leaf(gt_xy);
        let gt_q_v = tape.leaf(gt_q);
        let mcol = tape.leaf(mask.column(t));

        let (next, head) = step_vars(
            &mut TapeEngine { tape: &mut tape },
            &vars,
            &state,
            &xv,
            params.layers,
        );
        state = next;

        let nll_t = nll_on_tape(&mut tape, &head, gt_xy_v)?;
        let nll_m = tape.hadamard(nll_t, mcol)?;
        let nll_s = tape.sum_all(nll_m);
        nll_acc = Some(match nll_acc {
            Some(a) => tape.add(a, nll_s)?,
            None => nll_s,
        });

        let rot_t = rot_on_tape(&mut tape, &head, gt_q_v)?;
        let rot_m = tape.hadamard(rot_t, mcol)?;
        let rot_s = tape.sum_all(rot_m);
        rot_acc = Some(match rot_acc {
            Some(a) => tape.add(a, rot_s)?,
            None => rot_s,
        });
    }

    let inv_count = 1.0 / mask.count() as f64;
    let nll_mean = tape.affine(nll_acc.expect("t_max >= 1"), inv_count, 0.0);
    let rot_mean = tape.affine(rot_acc.expect("t_max >= 1"), inv_count, 0.0);
    let reg = reg_on_tape(&mut tape, &ids, lambda, reg_biases)?;
    let partial = tape.add(nll_mean, rot_mean)?;
    let total = tape.add(partial, reg)?;

    let breakdown = LossBreakdown {
        nll_position: tape.value(nll_mean).item(),
        rotation: tape.value(rot_mean).item(),
        regularization: tape.value(reg).item(),
        total: tape.value(total).item(),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(alloc::format!(
            "batch loss diverged: nll {} rot {} reg {}",
            breakdown.nll_position, breakdown.rotation, breakdown.regularization
        )));
    }

    let grads = tape.backward(total)?;
    let grad_mats: Vec<Matrix> = ids.iter().map(|&v| grads.wrt(v)).collect();
    Ok((breakdown, grad_mats))
}

/// Runs one optimizer step: batch loss, backward, RMSProp update in place.
fn step_batch(
    params: &mut ModelParams,
    windows: &[Window],
    cfg: &TrainConfig,
    lr: f64,
    rms: &mut RmsPropState,
) -> Result<LossBreakdown> {
    let (breakdown, grad_mats) = batch_loss_and_grads(params, windows, cfg.lambda, cfg.reg_biases)?;
    rmsprop_step(
        params,
        &grad_mats,
        rms,
        lr,
        cfg.rms_decay,
        cfg.epsilon,
        cfg.grad_clip,
    )?;
    Ok(breakdown)
}

struct EpochAccum {
    nll_sum: f64,
    rot_sum: f64,
    reg_sum: f64,
    samples: usize,
    batches: usize,
}

impl EpochAccum {
    fn new() -> Self {
        EpochAccum {
            nll_sum: 0.0,
            rot_sum: 0.0,
            reg_sum: 0.0,
            samples: 0,
            batches: 0,
        }
    }

    fn push(&mut self, b: &LossBreakdown, live: usize) {
        self.nll_sum += b.nll_position * live as f64;
        self.rot_sum += b.rotation * live as f64;
        self.reg_sum += b.regularization;
        self.samples += live;
        self.batches += 1;
    }

    fn log(&self, epoch: usize, stage: u8, lr: f64) -> EpochLog {
        let n = self.samples.max(1) as f64;
        let nll = self.nll_sum / n;
        let rot = self.rot_sum / n;
        let reg = self.reg_sum / self.batches.max(1) as f64;
        EpochLog {
            epoch,
            stage,
            lr,
            nll,
            rot,
            reg,
            total: nll + rot + reg,
        }
    }
}

/// Trains a fresh model on a resampled dataset. Returns the fitted
/// parameters (with normalization, interval and epoch day baked in) and the
/// per-epoch log. `on_epoch` fires after every epoch.
pub fn train(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if ds.trajectories.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    if !(ds.interval > 0.0) {
        return Err(Error::Invalid(
            "dataset must be resampled onto a uniform grid before training".into(),
        ));
    }

    let day0 = ds.epoch_day();
    let stats = fit_norm_stats(ds, cfg.use_time)?;
    let mut params = ModelParams::init_sized(cfg.seed, cfg.layers, cfg.use_time, cfg.hidden)?;
    params.norm = stats.clone();
    params.interval = ds.interval;
    params.day0 = day0;

    let feats: Vec<Vec<FeatureVec>> = ds
        .trajectories
        .iter()
        .map(|tr| {
            extract_features(tr, cfg.use_time, day0)
                .iter()
                .map(|f| apply_norm(f, &stats))
                .collect()
        })
        .collect();
    let feat_lens: Vec<usize> = feats.iter().map(|f| f.len()).collect();
    if count_windows(&feat_lens, cfg.stage1.seq_len) == 0 {
        return Err(Error::Invalid(
            "no trajectory has the 3+ samples needed to form a training window".into(),
        ));
    }

    // Separate stream from parameter init so the two never share draws.
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut rms = RmsPropState::zeros(&params);
    let mut logs = Vec::new();

    // Stage 1: fixed-length windows, re-cut and re-shuffled every epoch.
    for epoch in 0..cfg.stage1.epochs {
        let lr = cfg.stage1.lr * libm::pow(cfg.stage1.decay, epoch as f64);
        let windows = make_training_windows(&feats, cfg.stage1.seq_len, &mut rng)?;
        let mut acc = EpochAccum::new();
        for chunk in windows.chunks(cfg.batch_size) {
            let live: usize = chunk.iter().map(|w| w.len()).sum();
            let b = step_batch(&mut params, chunk, cfg, lr, &mut rms).map_err(|e| {
                Error::Numeric(alloc::format!("stage 1 epoch {}: {}", epoch, e))
            })?;
            acc.push(&b, live);
        }
        let log = acc.log(epoch, 1, lr);
        on_epoch(&log);
        logs.push(log);
    }

    // Stage 2: per-batch window length drawn from the configured range.
    // Window pools are cut once per length; batches sample from them.
    let mut pools: BTreeMap<usize, Vec<Window>> = BTreeMap::new();
    let batches_per_epoch = count_windows(&feat_lens, cfg.stage2.len_max)
        .div_ceil(cfg.batch_size)
        .max(1);
    for epoch in 0..cfg.stage2.epochs {
        let lr = cfg.stage2.lr * libm::pow(cfg.stage2.decay, epoch as f64);
        let mut acc = EpochAccum::new();
        for _ in 0..batches_per_epoch {
            let len = rng.gen_range(cfg.stage2.len_min..=cfg.stage2.len_max);
            if !pools.contains_key(&len) {
                let w = make_training_windows(&feats, len, &mut rng)?;
                pools.insert(len, w);
            }
            let pool = &pools[&len];
            let batch: Vec<Window> = if pool.len() <= cfg.batch_size {
                pool.clone()
            } else {
                rand::seq::index::sample(&mut rng, pool.len(), cfg.batch_size)
                    .into_iter()
                    .map(|i| pool[i].clone())
                    .collect()
            };
            let live: usize = batch.iter().map(|w| w.len()).sum();
            let b = step_batch(&mut params, &batch, cfg, lr, &mut rms).map_err(|e| {
                Error::Numeric(alloc::format!("stage 2 epoch {}: {}", epoch, e))
            })?;
            acc.push(&b, live);
        }
        let log = acc.log(epoch, 2, lr);
        on_epoch(&log);
        logs.push(log);
    }

    Ok((params, logs))
}
