//! Training loss: bivariate Gaussian negative log likelihood over position,
//! Euclidean distance between unit heading quaternions, and L2 weight
//! regularization, combined over a masked batch.
//!
//! Position NLL uses the standard bivariate normal density
//! (normalizer 2*pi*sx*sy*sqrt(1-rho^2)). Sigmas are floored at
//! [`SIGMA_FLOOR`] inside the loss only, so a collapsing variance cannot
//! blow up the likelihood while the model itself still reports what it
//! predicted.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{GaussianPoseOutput, HeadVars, ModelParams};
use crate::pose::canonicalize_quat;
use crate::tape::{Tape, Var};

/// ln(2*pi).
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Lower bound applied to sigmas inside the NLL.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Negative log likelihood of the ground-truth position under the predicted
/// bivariate Gaussian. At the mean with unit sigmas and rho 0 this is
/// exactly ln(2*pi). Errors on non-finite inputs, non-positive sigmas or
/// |rho| >= 1.
pub fn gaussian_nll(out: &GaussianPoseOutput, gt_xy: [f64; 2]) -> Result<f64> {
    let vals = [
        out.mu_x,
        out.mu_y,
        out.sigma_x,
        out.sigma_y,
        out.rho,
        gt_xy[0],
        gt_xy[1],
    ];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("NLL inputs must be finite".into()));
    }
    if out.sigma_x <= 0.0 || out.sigma_y <= 0.0 {
        return Err(Error::Numeric(alloc::format!(
            "sigmas must be positive, got ({}, {})",
            out.sigma_x,
            out.sigma_y
        )));
    }
    if out.rho.abs() >= 1.0 {
        return Err(Error::Numeric(alloc::format!(
            "correlation must lie in (-1, 1), got {}",
            out.rho
        )));
    }
    let sx = out.sigma_x.max(SIGMA_FLOOR);
    let sy = out.sigma_y.max(SIGMA_FLOOR);
    let zx = (out.mu_x - gt_xy[0]) / sx;
    let zy = (out.mu_y - gt_xy[1]) / sy;
    let omr = 1.0 - out.rho * out.rho;
    let q = zx * zx - 2.0 * out.rho * zx * zy + zy * zy;
    Ok(LN_2PI + math::ln(sx) + math::ln(sy) + 0.5 * math::ln(omr) + q / (2.0 * omr))
}

/// Euclidean distance between the predicted heading quaternion (normalized
/// and sign-canonicalized first) and the canonical ground truth. A raw
/// prediction too small to normalize falls back to the identity rotation;
/// the second return value flags that case so callers can count it.
pub fn rotation_l2(out: &GaussianPoseOutput, gt_q: [f64; 2]) -> Result<(f64, bool)> {
    let (gz, gw) = canonicalize_quat(gt_q[0], gt_q[1])
        .map_err(|_| Error::Invalid("ground-truth quaternion is degenerate".into()))?;
    let ((pz, pw), degenerate) = out.quat_canonical();
    Ok((math::hypot(pz - gz, pw - gw), degenerate))
}

/// `lambda` times the sum of squared weight entries. Biases are excluded
/// unless `include_biases` is set. `lambda == 0` contributes exactly 0.
pub fn l2_regularization(params: &ModelParams, lambda: f64, include_biases: bool) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mats = params.param_matrices();
    let sum: f64 = if include_biases {
        mats.iter().map(|m| m.frob_sq()).sum()
    } else {
        ModelParams::weight_indices()
            .iter()
            .map(|&i| mats[i].frob_sq())
            .sum()
    };
    lambda * sum
}

/// Which samples of a batch-major field are real: row b, column t is 1 while
/// sequence b is still running at step t, 0 once it has ended. Rows are
/// prefixes by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMask {
    mask: Matrix,
    count: usize,
}

impl BatchMask {
    /// Mask for `lengths[b]` live steps out of `t_max` per sequence.
    pub fn from_lengths(lengths: &[usize], t_max: usize) -> Result<Self> {
        if lengths.is_empty() || t_max == 0 {
            return Err(Error::Invalid("mask needs at least one sequence and step".into()));
        }
        let mut mask = Matrix::zeros(lengths.len(), t_max);
        let mut count = 0usize;
        for (b, &len) in lengths.iter().enumerate() {
            if len == 0 || len > t_max {
                return Err(Error::Invalid(alloc::format!(
                    "sequence {} has length {}, outside 1..={}",
                    b,
                    len,
                    t_max
                )));
            }
            for t in 0..len {
                mask.set(b, t, 1.0);
            }
            count += len;
        }
        Ok(BatchMask { mask, count })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    /// Number of live entries.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_live(&self, b: usize, t: usize) -> bool {
        self.mask.get(b, t) == 1.0
    }

    /// Column `t` as a batch x 1 matrix of 0/1.
    pub fn column(&self, t: usize) -> Matrix {
        let mut col = Matrix::zeros(self.mask.rows(), 1);
        for b in 0..self.mask.rows() {
            col.set(b, 0, self.mask.get(b, t));
        }
        col
    }
}

/// The combined training loss, by component. `total` is constructed as the
/// exact sum of the three parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean position NLL over live samples.
    pub nll_position: f64,
    /// Mean rotation distance over live samples.
    pub rotation: f64,
    /// Regularization term (not averaged).
    pub regularization: f64,
    pub total: f64,
}

/// Combines per-step position NLL and rotation losses (batch x steps each)
/// into the scalar training loss: masked means of both fields plus
/// regularization. Masked-out entries are never read, so values there
/// (even NaN from padded targets) cannot leak in.
pub fn masked_batch_loss(
    nll: &Matrix,
    rot: &Matrix,
    mask: &BatchMask,
    params: &ModelParams,
    lambda: f64,
    include_biases: bool,
) -> Result<LossBreakdown> {
    if nll.shape() != mask.shape() || rot.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "masked_batch_loss",
            lhs: nll.shape(),
            rhs: mask.shape(),
        });
    }
    if mask.count() == 0 {
        return Err(Error::Invalid("batch mask selects no samples".into()));
    }
    let (rows, cols) = mask.shape();
    let mut nll_sum = 0.0;
    let mut rot_sum = 0.0;
    for b in 0..rows {
        for t in 0..cols {
            if !mask.is_live(b, t) {
                continue;
            }
            let nv = nll.get(b, t);
            let rv = rot.get(b, t);
            if !nv.is_finite() {
                return Err(Error::Numeric(alloc::format!(
                    "position NLL is {} at sequence {}, step {}",
                    nv, b, t
                )));
            }
            if !rv.is_finite() {
                return Err(Error::Numeric(alloc::format!(
                    "rotation loss is {} at sequence {}, step {}",
                    rv, b, t
                )));
            }
            nll_sum += nv;
            rot_sum += rv;
        }
    }
    let n = mask.count() as f64;
    let nll_position = nll_sum / n;
    let rotation = rot_sum / n;
    let regularization = l2_regularization(params, lambda, include_biases);
    Ok(LossBreakdown {
        nll_position,
        rotation,
        regularization,
        total: nll_position + rotation + regularization,
    })
}

// ---------------------------------------------------------------------------
// Tape builders (training path)

/// Per-sequence position NLL at one step: head (batch-sized) against a
/// batch x 2 ground-truth leaf. Returns a batch x 1 node.
pub(crate) fn nll_on_tape(tape: &mut Tape, head: &HeadVars<Var>, gt_xy: Var) -> Result<Var> {
    let sigma_c = tape.clamp_min(head.sigma, SIGMA_FLOOR);
    let sx = tape.slice_cols(sigma_c, 0, 1)?;
    let sy = tape.slice_cols(sigma_c, 1, 2)?;
    let d = tape.sub(head.mu, gt_xy)?;
    let dx = tape.slice_cols(d, 0, 1)?;
    let dy = tape.slice_cols(d, 1, 2)?;
    let zx = tape.div(dx, sx)?;
    let zy = tape.div(dy, sy)?;
    let zx2 = tape.hadamard(zx, zx)?;
    let zy2 = tape.hadamard(zy, zy)?;
    let zxzy = tape.hadamard(zx, zy)?;
    let rzz = tape.hadamard(head.rho, zxzy)?;
    let cross = tape.affine(rzz, -2.0, 0.0);
    let q1 = tape.add(zx2, cross)?;
    let q = tape.add(q1, zy2)?;
    let r2 = tape.hadamard(head.rho, head.rho)?;
    let omr = tape.affine(r2, -1.0, 1.0);
    let denom = tape.affine(omr, 2.0, 0.0);
    let maha = tape.div(q, denom)?;
    let lx = tape.ln(sx);
    let ly = tape.ln(sy);
    let lomr = tape.ln(omr);
    let lomr_half = tape.affine(lomr, 0.5, 0.0);
    let det1 = tape.add(lx, ly)?;
    let det = tape.add(det1, lomr_half)?;
    let core = tape.add(det, maha)?;
    Ok(tape.affine(core, 1.0, LN_2PI))
}

/// Rotation distance at one step: canonicalized prediction against a
/// batch x 2 canonical ground-truth leaf. Returns a batch x 1 node.
pub(crate) fn rot_on_tape(tape: &mut Tape, head: &HeadVars<Var>, gt_q: Var) -> Result<Var> {
    let q = tape.quat_canon_rows(head.quat_raw)?;
    let d = tape.sub(q, gt_q)?;
    let sq = tape.hadamard(d, d)?;
    let ssum = tape.sum_rows(sq);
    Ok(tape.sqrt(ssum))
}

/// `lambda * sum of squared weights` as a 1x1 node over the given parameter
/// leaves (aligned with [`ModelParams::param_matrices`]).
pub(crate) fn reg_on_tape(
    tape: &mut Tape,
    param_ids: &[Var; 12],
    lambda: f64,
    include_biases: bool,
) -> Result<Var> {
    let indices: Vec<usize> = if include_biases {
        (0..12).collect()
    } else {
        ModelParams::weight_indices().to_vec()
    };
    let mut acc: Option<Var> = None;
    for i in indices {
        let sq = tape.hadamard(param_ids[i], param_ids[i])?;
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let sum = acc.expect("at least one matrix selected");
    Ok(tape.affine(sum, lambda, 0.0))
}
