//! The sequence model: input embedding, a stack of LSTM layers sharing one
//! set of cell weights, and a Gaussian pose decoder head.
//!
//! Per step the model takes a 6-feature observation and emits a bivariate
//! Gaussian over the next position (mean, per-axis sigma, correlation) plus
//! a raw heading quaternion. Stacking reuses the same cell parameters at
//! every layer, so a 3-layer model has exactly as many parameters as a
//! single-layer one; this works because the embedding width equals the
//! hidden width.
//!
//! The forward pass is written once, generically over an "engine", and run
//! either directly on matrices (inference) or on the autodiff tape
//! (training). That guarantees the two paths compute identical values.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::tape::{Tape, Var, QUAT_DEGENERATE_NORM};
use crate::trajectory::{FeatureVec, NormStats};

/// Default hidden/embedding width.
pub const HIDDEN: usize = 128;
/// Number of input features (x, y, qz, qw, t_day, t_hms).
pub const INPUT: usize = 6;
/// Decoder outputs: mu_x, mu_y, log sigma_x, log sigma_y, rho logit, qz, qw.
pub const OUTPUT: usize = 7;

/// Magic bytes identifying a serialized model.
pub const MODEL_MAGIC: &[u8; 7] = b"TPLSTM1";
const MODEL_VERSION: u16 = 1;

/// One LSTM cell: gate weights over `[input | hidden]` and gate biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    /// Input gate weights, (2H) x H.
    pub w_i: Matrix,
    /// Forget gate weights, (2H) x H.
    pub w_f: Matrix,
    /// Output gate weights, (2H) x H.
    pub w_o: Matrix,
    /// Cell candidate weights, (2H) x H.
    pub w_s: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_s: Matrix,
}

/// Full parameter set plus the metadata needed to run it on raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Input embedding, INPUT x H.
    pub w_embed: Matrix,
    pub b_embed: Matrix,
    /// The one cell shared by all layers.
    pub cell: LstmCellParams,
    /// Decoder, H x OUTPUT.
    pub w_dec: Matrix,
    pub b_dec: Matrix,
    /// Stack depth; 1 or 3.
    pub layers: usize,
    /// Hidden width H.
    pub hidden: usize,
    /// Whether time-of-day features are fed (false: their slots are zero).
    pub use_time: bool,
    /// Feature normalization fitted at training time.
    pub norm: NormStats,
    /// Step interval [s] of the training grid; used to extrapolate time.
    pub interval: f64,
    /// Epoch day of the training data; anchors the day-index feature.
    pub day0: i64,
}

/// Recurrent state: cell and hidden activations per layer, batch x H each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<Matrix>,
    pub h: Vec<Matrix>,
}

impl LstmState {
    pub fn zeros(layers: usize, hidden: usize, batch: usize) -> Self {
        LstmState {
            c: (0..layers).map(|_| Matrix::zeros(batch, hidden)).collect(),
            h: (0..layers).map(|_| Matrix::zeros(batch, hidden)).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.c.len()
    }

    pub fn batch(&self) -> usize {
        self.c.first().map(|m| m.rows()).unwrap_or(0)
    }
}

/// Decoder output for one observation: a bivariate Gaussian over the next
/// position and a raw (not yet normalized) heading quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPoseOutput {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
    pub qz_raw: f64,
    pub qw_raw: f64,
}

impl GaussianPoseOutput {
    /// Canonical unit heading quaternion; `true` if the raw output was too
    /// close to zero to normalize (falls back to the identity rotation).
    pub fn quat_canonical(&self) -> ((f64, f64), bool) {
        let n = math::hypot(self.qz_raw, self.qw_raw);
        if n < QUAT_DEGENERATE_NORM {
            ((0.0, 1.0), true)
        } else {
            let s = if self.qw_raw < 0.0 { -1.0 } else { 1.0 };
            ((s * self.qz_raw / n, s * self.qw_raw / n), false)
        }
    }
}

// ---------------------------------------------------------------------------
// Generic forward pass

/// The operations the forward pass needs, implementable by both the direct
/// matrix evaluator and the autodiff tape.
pub(crate) trait Engine {
    type V: Clone;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn add_bias(&mut self, m: &Self::V, bias: &Self::V) -> Self::V;
    fn concat_cols(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn slice_cols(&mut self, a: &Self::V, start: usize, end: usize) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn hadamard(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn relu(&mut self, a: &Self::V) -> Self::V;
    fn exp(&mut self, a: &Self::V) -> Self::V;
}

/// Runs ops directly on matrices. Shapes are pre-validated by the public
/// entry points, so kernel errors here are programming bugs.
pub(crate) struct EvalEngine;

const SHAPE_OK: &str = "model wiring guarantees shapes";

impl Engine for EvalEngine {
    type V = Matrix;
    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.matmul(b).expect(SHAPE_OK)
    }
    fn add_bias(&mut self, m: &Matrix, bias: &Matrix) -> Matrix {
        m.add_bias(bias).expect(SHAPE_OK)
    }
    fn concat_cols(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.concat_cols(b).expect(SHAPE_OK)
    }
    fn slice_cols(&mut self, a: &Matrix, start: usize, end: usize) -> Matrix {
        a.slice_cols(start, end).expect(SHAPE_OK)
    }
    fn add(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.add(b).expect(SHAPE_OK)
    }
    fn hadamard(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.hadamard(b).expect(SHAPE_OK)
    }
    fn sigmoid(&mut self, a: &Matrix) -> Matrix {
        a.sigmoid()
    }
    fn tanh(&mut self, a: &Matrix) -> Matrix {
        a.tanh()
    }
    fn relu(&mut self, a: &Matrix) -> Matrix {
        a.relu()
    }
    fn exp(&mut self, a: &Matrix) -> Matrix {
        a.exp()
    }
}

/// Records ops on an autodiff tape.
pub(crate) struct TapeEngine<'t> {
    pub tape: &'t mut Tape,
}

impl Engine for TapeEngine<'_> {
    type V = Var;
    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        self.tape.matmul(*a, *b).expect(SHAPE_OK)
    }
    fn add_bias(&mut self, m: &Var, bias: &Var) -> Var {
        self.tape.add_bias(*m, *bias).expect(SHAPE_OK)
    }
    fn concat_cols(&mut self, a: &Var, b: &Var) -> Var {
        self.tape.concat_cols(*a, *b).expect(SHAPE_OK)
    }
    fn slice_cols(&mut self, a: &Var, start: usize, end: usize) -> Var {
        self.tape.slice_cols(*a, start, end).expect(SHAPE_OK)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        self.tape.add(*a, *b).expect(SHAPE_OK)
    }
    fn hadamard(&mut self, a: &Var, b: &Var) -> Var {
        self.tape.hadamard(*a, *b).expect(SHAPE_OK)
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        self.tape.sigmoid(*a)
    }
    fn tanh(&mut self, a: &Var) -> Var {
        self.tape.tanh(*a)
    }
    fn relu(&mut self, a: &Var) -> Var {
        self.tape.relu(*a)
    }
    fn exp(&mut self, a: &Var) -> Var {
        self.tape.exp(*a)
    }
}

pub(crate) struct CellVars<V> {
    pub w_i: V,
    pub w_f: V,
    pub w_o: V,
    pub w_s: V,
    pub b_i: V,
    pub b_f: V,
    pub b_o: V,
    pub b_s: V,
}

pub(crate) struct ModelVars<V> {
    pub w_embed: V,
    pub b_embed: V,
    pub cell: CellVars<V>,
    pub w_dec: V,
    pub b_dec: V,
}

pub(crate) struct StateVars<V> {
    pub c: Vec<V>,
    pub h: Vec<V>,
}

/// Decoder head with activations already applied (sigma through exp, rho
/// through tanh); `quat_raw` stays raw.
pub(crate) struct HeadVars<V> {
    pub mu: V,
    pub sigma: V,
    pub rho: V,
    pub quat_raw: V,
}

/// One model step for a batch: embed the observation, run the shared cell
/// through the stack, decode the top hidden state.
pub(crate) fn step_vars<E: Engine>(
    e: &mut E,
    p: &ModelVars<E::V>,
    state: &StateVars<E::V>,
    x: &E::V,
    layers: usize,
) -> (StateVars<E::V>, HeadVars<E::V>) {
    let emb_lin = e.matmul(x, &p.w_embed);
    let emb_aff = e.add_bias(&emb_lin, &p.b_embed);
    let mut input = e.relu(&emb_aff);

    let mut next = StateVars {
        c: Vec::with_capacity(layers),
        h: Vec::with_capacity(layers),
    };
    for l in 0..layers {
        let xh = e.concat_cols(&input, &state.h[l]);
        let gate = |e: &mut E, w: &E::V, b: &E::V| {
            let lin = e.matmul(&xh, w);
            e.add_bias(&lin, b)
        };
        let i_pre = gate(e, &p.cell.w_i, &p.cell.b_i);
        let i = e.sigmoid(&i_pre);
        let f_pre = gate(e, &p.cell.w_f, &p.cell.b_f);
        let f = e.sigmoid(&f_pre);
        let o_pre = gate(e, &p.cell.w_o, &p.cell.b_o);
        let o = e.sigmoid(&o_pre);
        let s_pre = gate(e, &p.cell.w_s, &p.cell.b_s);
        let s_cand = e.tanh(&s_pre);

        let keep = e.hadamard(&f, &state.c[l]);
        let write = e.hadamard(&i, &s_cand);
        let c_new = e.add(&keep, &write);
        let c_act = e.tanh(&c_new);
        let h_new = e.hadamard(&o, &c_act);

        next.c.push(c_new);
        input = h_new.clone();
        next.h.push(h_new);
    }

    let dec_lin = e.matmul(&input, &p.w_dec);
    let dec = e.add_bias(&dec_lin, &p.b_dec);
    let mu = e.slice_cols(&dec, 0, 2);
    let sig_raw = e.slice_cols(&dec, 2, 4);
    let sigma = e.exp(&sig_raw);
    let rho_raw = e.slice_cols(&dec, 4, 5);
    let rho = e.tanh(&rho_raw);
    let quat_raw = e.slice_cols(&dec, 5, 7);
    (
        next,
        HeadVars {
            mu,
            sigma,
            rho,
            quat_raw,
        },
    )
}

// ---------------------------------------------------------------------------
// Parameters

impl ModelParams {
    /// Glorot-uniform initialization; biases zero except the forget gate
    /// bias at 1 (standard trick so early training does not forget).
    /// Deterministic in `seed`; weights are drawn in a fixed order.
    pub fn init(seed: u64, layers: usize, use_time: bool) -> Result<Self> {
        Self::init_sized(seed, layers, use_time, HIDDEN)
    }

    /// As [`ModelParams::init`] with a custom hidden width (tests use small
    /// widths to keep finite-difference sweeps fast).
    pub fn init_sized(seed: u64, layers: usize, use_time: bool, hidden: usize) -> Result<Self> {
        if layers != 1 && layers != 3 {
            return Err(Error::Invalid(alloc::format!(
                "layers must be 1 or 3, got {}",
                layers
            )));
        }
        if hidden == 0 {
            return Err(Error::Invalid("hidden width must be positive".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let bound = math::sqrt(6.0 / (rows + cols) as f64);
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        let w_embed = glorot(INPUT, hidden);
        let w_i = glorot(2 * hidden, hidden);
        let w_f = glorot(2 * hidden, hidden);
        let w_o = glorot(2 * hidden, hidden);
        let w_s = glorot(2 * hidden, hidden);
        let w_dec = glorot(hidden, OUTPUT);
        Ok(ModelParams {
            w_embed,
            b_embed: Matrix::zeros(1, hidden),
            cell: LstmCellParams {
                w_i,
                w_f,
                w_o,
                w_s,
                b_i: Matrix::zeros(1, hidden),
                b_f: Matrix::filled(1, hidden, 1.0),
                b_o: Matrix::zeros(1, hidden),
                b_s: Matrix::zeros(1, hidden),
            },
            w_dec,
            b_dec: Matrix::zeros(1, OUTPUT),
            layers,
            hidden,
            use_time,
            norm: NormStats::identity(),
            interval: 0.0,
            day0: 0,
        })
    }

    /// All parameter matrices in a fixed order (weights and biases).
    pub fn param_matrices(&self) -> [&Matrix; 12] {
        [
            &self.w_embed,
            &self.b_embed,
            &self.cell.w_i,
            &self.cell.w_f,
            &self.cell.w_o,
            &self.cell.w_s,
            &self.cell.b_i,
            &self.cell.b_f,
            &self.cell.b_o,
            &self.cell.b_s,
            &self.w_dec,
            &self.b_dec,
        ]
    }

    pub fn param_matrices_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.w_embed,
            &mut self.b_embed,
            &mut self.cell.w_i,
            &mut self.cell.w_f,
            &mut self.cell.w_o,
            &mut self.cell.w_s,
            &mut self.cell.b_i,
            &mut self.cell.b_f,
            &mut self.cell.b_o,
            &mut self.cell.b_s,
            &mut self.w_dec,
            &mut self.b_dec,
        ]
    }

    /// Indices into [`ModelParams::param_matrices`] that are weight (not
    /// bias) matrices; the set L2 regularization applies to by default.
    pub fn weight_indices() -> [usize; 6] {
        [0, 2, 3, 4, 5, 10]
    }

    /// Total number of scalar parameters. Independent of `layers` because
    /// the cell is shared.
    pub fn param_count(&self) -> usize {
        self.param_matrices()
            .iter()
            .map(|m| m.rows() * m.cols())
            .sum()
    }

    pub(crate) fn vars_eval(&self) -> ModelVars<Matrix> {
        ModelVars {
            w_embed: self.w_embed.clone(),
            b_embed: self.b_embed.clone(),
            cell: CellVars {
                w_i: self.cell.w_i.clone(),
                w_f: self.cell.w_f.clone(),
                w_o: self.cell.w_o.clone(),
                w_s: self.cell.w_s.clone(),
                b_i: self.cell.b_i.clone(),
                b_f: self.cell.b_f.clone(),
                b_o: self.cell.b_o.clone(),
                b_s: self.cell.b_s.clone(),
            },
            w_dec: self.w_dec.clone(),
            b_dec: self.b_dec.clone(),
        }
    }

    /// Registers every parameter matrix on a tape. Returns the vars plus
    /// the leaf list aligned with [`ModelParams::param_matrices`].
    pub(crate) fn vars_on_tape(&self, tape: &mut Tape) -> (ModelVars<Var>, [Var; 12]) {
        let mats = self.param_matrices();
        let leaves: Vec<Var> = mats.iter().map(|m| tape.leaf((*m).clone())).collect();
        let vars = ModelVars {
            w_embed: leaves[0],
            b_embed: leaves[1],
            cell: CellVars {
                w_i: leaves[2],
                w_f: leaves[3],
                w_o: leaves[4],
                w_s: leaves[5],
                b_i: leaves[6],
                b_f: leaves[7],
                b_o: leaves[8],
                b_s: leaves[9],
            },
            w_dec: leaves[10],
            b_dec: leaves[11],
        };
        let ids: [Var; 12] = leaves.try_into().expect("12 parameter matrices");
        (vars, ids)
    }

    fn validate_state(&self, state: &LstmState) -> Result<()> {
        if state.layers() != self.layers {
            return Err(Error::Invalid(alloc::format!(
                "state has {} layers, model has {}",
                state.layers(),
                self.layers
            )));
        }
        for m in state.c.iter().chain(&state.h) {
            if m.cols() != self.hidden {
                return Err(Error::ShapeMismatch {
                    op: "step state",
                    lhs: m.shape(),
                    rhs: (m.rows(), self.hidden),
                });
            }
        }
        Ok(())
    }
}

fn head_output_row(head: &HeadVars<Matrix>, row: usize) -> GaussianPoseOutput {
    GaussianPoseOutput {
        mu_x: head.mu.get(row, 0),
        mu_y: head.mu.get(row, 1),
        sigma_x: head.sigma.get(row, 0),
        sigma_y: head.sigma.get(row, 1),
        rho: head.rho.get(row, 0),
        qz_raw: head.quat_raw.get(row, 0),
        qw_raw: head.quat_raw.get(row, 1),
    }
}

pub(crate) fn feature_row(obs: &FeatureVec) -> Matrix {
    Matrix::from_vec(1, INPUT, obs.to_vec()).expect("6 features")
}

/// One step with prepared parameter matrices (avoids recloning them in
/// streaming loops).
pub(crate) fn step_prepared(
    vars: &ModelVars<Matrix>,
    layers: usize,
    state: &LstmState,
    obs: &FeatureVec,
) -> (LstmState, GaussianPoseOutput) {
    let mut e = EvalEngine;
    let sv = StateVars {
        c: state.c.clone(),
        h: state.h.clone(),
    };
    let x = feature_row(obs);
    let (next, head) = step_vars(&mut e, vars, &sv, &x, layers);
    (
        LstmState {
            c: next.c,
            h: next.h,
        },
        head_output_row(&head, 0),
    )
}

/// Advances the model by one observation (batch of 1). The input state is
/// untouched; the successor state is returned alongside the decoded output.
pub fn step(
    params: &ModelParams,
    state: &LstmState,
    obs: &FeatureVec,
) -> Result<(LstmState, GaussianPoseOutput)> {
    params.validate_state(state)?;
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("observation features must be finite".into()));
    }
    let vars = params.vars_eval();
    Ok(step_prepared(&vars, params.layers, state, obs))
}

/// Runs a whole (normalized) feature sequence from `init`, returning one
/// decoded output per input step and the final state. Equivalent to calling
/// [`step`] in a loop; state threading is exact, so splitting a sequence
/// and carrying the state across the split changes nothing.
pub fn forward_sequence(
    params: &ModelParams,
    features: &[FeatureVec],
    init: &LstmState,
) -> Result<(Vec<GaussianPoseOutput>, LstmState)> {
    params.validate_state(init)?;
    for f in features {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("observation features must be finite".into()));
        }
    }
    let vars = params.vars_eval();
    let mut state = init.clone();
    let mut outputs = Vec::with_capacity(features.len());
    for f in features {
        let (next, out) = step_prepared(&vars, params.layers, &state, f);
        state = next;
        outputs.push(out);
    }
    Ok((outputs, state))
}

// ---------------------------------------------------------------------------
// Serialization

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix(out: &mut Vec<u8>, m: &Matrix) {
    push_u32(out, m.rows() as u32);
    push_u32(out, m.cols() as u32);
    for &v in m.data() {
        push_f64(out, v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("model file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows.saturating_mul(cols) > 64 * 1024 * 1024 {
            return Err(Error::Format("matrix header implausibly large".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Matrix::from_vec(rows, cols, data).map_err(|_| Error::Format("bad matrix".into()))
    }
}

/// Serializes parameters to a little-endian byte stream (magic "TPLSTM1").
pub fn serialize(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    push_u16(&mut out, MODEL_VERSION);
    out.push(params.layers as u8);
    out.push(params.use_time as u8);
    push_u32(&mut out, params.hidden as u32);
    out.extend_from_slice(&params.day0.to_le_bytes());
    push_f64(&mut out, params.interval);
    for v in params.norm.mean.iter().chain(&params.norm.std) {
        push_f64(&mut out, *v);
    }
    for m in params.param_matrices() {
        push_matrix(&mut out, m);
    }
    out
}

/// Decodes [`serialize`] output, validating magic, version, layer count and
/// every matrix shape. Rejects trailing bytes.
pub fn deserialize(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(alloc::format!(
            "unsupported model version {}",
            version
        )));
    }
    let layers = r.u8()? as usize;
    if layers != 1 && layers != 3 {
        return Err(Error::Format(alloc::format!(
            "layers must be 1 or 3, got {}",
            layers
        )));
    }
    let use_time = match r.u8()? {
        0 => false,
        1 => true,
        v => {
            return Err(Error::Format(alloc::format!(
                "use_time flag must be 0 or 1, got {}",
                v
            )))
        }
    };
    let hidden = r.u32()? as usize;
    let day0 = r.i64()?;
    let interval = r.f64()?;
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for v in mean.iter_mut() {
        *v = r.f64()?;
    }
    for v in std.iter_mut() {
        *v = r.f64()?;
    }

    let mats: Vec<Matrix> = (0..12).map(|_| r.matrix()).collect::<Result<_>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after model data".into()));
    }

    let expect = |m: &Matrix, rows: usize, cols: usize, what: &str| -> Result<()> {
        if m.shape() != (rows, cols) {
            return Err(Error::Format(alloc::format!(
                "{} has shape {}x{}, expected {}x{}",
                what,
                m.rows(),
                m.cols(),
                rows,
                cols
            )));
        }
        Ok(())
    };
    expect(&mats[0], INPUT, hidden, "embedding")?;
    expect(&mats[1], 1, hidden, "embedding bias")?;
    for (i, name) in ["w_i", "w_f", "w_o", "w_s"].iter().enumerate() {
        expect(&mats[2 + i], 2 * hidden, hidden, name)?;
    }
    for (i, name) in ["b_i", "b_f", "b_o", "b_s"].iter().enumerate() {
        expect(&mats[6 + i], 1, hidden, name)?;
    }
    expect(&mats[10], hidden, OUTPUT, "decoder")?;
    expect(&mats[11], 1, OUTPUT, "decoder bias")?;

    let mut it = mats.into_iter();
    let mut next = || it.next().expect("12 matrices");
    Ok(ModelParams {
        w_embed: next(),
        b_embed: next(),
        cell: LstmCellParams {
            w_i: next(),
            w_f: next(),
            w_o: next(),
            w_s: next(),
            b_i: next(),
            b_f: next(),
            b_o: next(),
            b_s: next(),
        },
        w_dec: next(),
        b_dec: next(),
        layers,
        hidden,
        use_time,
        norm: NormStats { mean, std },
        interval,
        day0,
    })
}
