//! Reverse-mode automatic differentiation over matrix values.
//!
//! Every operation records its inputs on a tape while eagerly computing the
//! result; `backward` then walks the records in reverse and accumulates
//! adjoints. Nodes are arena indices (`Var`), so graphs are cheap to build
//! and there is no reference counting. A tape is built per training batch
//! and thrown away.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::{add_matmul_a_bt, add_matmul_at_b, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Quaternion rows with squared norm below this are treated as degenerate
/// and replaced by the identity rotation (0, 1).
pub const QUAT_DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
enum Op {
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Hadamard { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddBias { m: usize, bias: usize },
    Affine { a: usize, k: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Exp { a: usize },
    Ln { a: usize },
    Sqrt { a: usize },
    ClampMin { a: usize, floor: f64 },
    ConcatCols { a: usize, b: usize },
    SliceCols { a: usize, start: usize },
    SumAll { a: usize },
    SumRows { a: usize },
    QuatCanonRows { a: usize },
}

struct Rec {
    op: Op,
    out: usize,
}

/// Gradient store produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero matrix if `v` did not influence
    /// the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn try_wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    vals: Vec<Matrix>,
    recs: Vec<Rec>,
    quat_degenerate: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Number of degenerate quaternion rows seen by `quat_canon_rows` so far.
    pub fn quat_degenerate_count(&self) -> usize {
        self.quat_degenerate
    }

    /// Registers an input node (parameter or constant).
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m)
    }

    /// 1x1 constant.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Matrix::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.vals[v.0]
    }

    fn push(&mut self, m: Matrix) -> Var {
        self.vals.push(m);
        Var(self.vals.len() - 1)
    }

    fn record(&mut self, m: Matrix, op: Op) -> Var {
        let v = self.push(m);
        self.recs.push(Rec { op, out: v.0 });
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.vals[a.0].matmul(&self.vals[b.0])?;
        Ok(self.record(m, Op::Matmul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.vals[a.0].add(&self.vals[b.0])?;
        Ok(self.record(m, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.vals[a.0].sub(&self.vals[b.0])?;
        Ok(self.record(m, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.vals[a.0].hadamard(&self.vals[b.0])?;
        Ok(self.record(m, Op::Hadamard { a: a.0, b: b.0 }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.vals[a.0].div(&self.vals[b.0])?;
        Ok(self.record(m, Op::Div { a: a.0, b: b.0 }))
    }

    /// Broadcast-add a 1xN bias row to each row.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let out = self.vals[m.0].add_bias(&self.vals[bias.0])?;
        Ok(self.record(
            out,
            Op::AddBias {
                m: m.0,
                bias: bias.0,
            },
        ))
    }

    /// `k * a + c` elementwise.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let m = self.vals[a.0].affine(k, c);
        self.record(m, Op::Affine { a: a.0, k })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let m = self.vals[a.0].sigmoid();
        self.record(m, Op::Sigmoid { a: a.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.vals[a.0].tanh();
        self.record(m, Op::Tanh { a: a.0 })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let m = self.vals[a.0].relu();
        self.record(m, Op::Relu { a: a.0 })
    }

    /// Elementwise exp; inputs are clamped to [-40, 40] and the gradient is
    /// zero where the clamp was active.
    pub fn exp(&mut self, a: Var) -> Var {
        let m = self.vals[a.0].exp();
        self.record(m, Op::Exp { a: a.0 })
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let m = self.vals[a.0].ln();
        self.record(m, Op::Ln { a: a.0 })
    }

    /// Elementwise square root; gradient at exactly zero is defined as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let m = self.vals[a.0].sqrt();
        self.record(m, Op::Sqrt { a: a.0 })
    }

    /// Elementwise max(a, floor); gradient passes where `a >= floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let m = self.vals[a.0].clamp_min(floor);
        self.record(m, Op::ClampMin { a: a.0, floor })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.vals[a.0].concat_cols(&self.vals[b.0])?;
        Ok(self.record(m, Op::ConcatCols { a: a.0, b: b.0 }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let m = self.vals[a.0].slice_cols(start, end)?;
        Ok(self.record(m, Op::SliceCols { a: a.0, start }))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let m = Matrix::scalar(self.vals[a.0].sum());
        self.record(m, Op::SumAll { a: a.0 })
    }

    /// Row-wise sum: MxN -> Mx1.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let src = &self.vals[a.0];
        let mut out = Matrix::zeros(src.rows(), 1);
        for r in 0..src.rows() {
            out.set(r, 0, src.row(r).iter().sum());
        }
        self.record(out, Op::SumRows { a: a.0 })
    }

    /// Normalizes each (qz, qw) row to unit length with qw >= 0. Rows whose
    /// norm is below [`QUAT_DEGENERATE_NORM`] become the identity rotation
    /// (0, 1) with zero gradient, and bump the degeneracy counter.
    pub fn quat_canon_rows(&mut self, a: Var) -> Result<Var> {
        let src = &self.vals[a.0];
        if src.cols() != 2 {
            return Err(Error::ShapeMismatch {
                op: "quat_canon_rows",
                lhs: src.shape(),
                rhs: (src.rows(), 2),
            });
        }
        let mut out = Matrix::zeros(src.rows(), 2);
        let mut degenerate = 0usize;
        for r in 0..src.rows() {
            let (z, w) = (src.get(r, 0), src.get(r, 1));
            let n = math::hypot(z, w);
            if n < QUAT_DEGENERATE_NORM {
                degenerate += 1;
                out.set(r, 0, 0.0);
                out.set(r, 1, 1.0);
            } else {
                let s = if w < 0.0 { -1.0 } else { 1.0 };
                out.set(r, 0, s * z / n);
                out.set(r, 1, s * w / n);
            }
        }
        self.quat_degenerate += degenerate;
        Ok(self.record(out, Op::QuatCanonRows { a: a.0 }))
    }

    /// Accumulates d(loss)/d(node) for every node reaching `loss`, which must
    /// be 1x1. Intermediate values are released as the sweep passes them, so
    /// the tape cannot be extended or re-read afterwards (leaf values stay).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.vals[loss.0].shape() != (1, 1) {
            return Err(Error::Invalid(alloc::format!(
                "backward needs a scalar loss node, got {}x{}",
                self.vals[loss.0].rows(),
                self.vals[loss.0].cols()
            )));
        }
        let shapes: Vec<(usize, usize)> = self.vals.iter().map(|m| m.shape()).collect();
        let mut grads: Vec<Option<Matrix>> = vec![None; self.vals.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        let is_leaf = {
            let mut leaf = vec![true; self.vals.len()];
            for rec in &self.recs {
                leaf[rec.out] = false;
            }
            leaf
        };

        for i in (0..self.recs.len()).rev() {
            let Rec { op, out } = self.recs[i];
            let go = match grads[out].take() {
                Some(g) => g,
                None => {
                    // Not on any path to the loss; drop its value anyway.
                    self.vals[out] = Matrix::zeros(0, 0);
                    continue;
                }
            };
            self.adjoint(op, out, &go, &mut grads);
            self.vals[out] = Matrix::zeros(0, 0);
        }

        // Keep only leaf gradients; internal nodes were consumed above.
        for (i, g) in grads.iter_mut().enumerate() {
            if !is_leaf[i] {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(grads: &mut [Option<Matrix>], id: usize, delta: Matrix) {
        match &mut grads[id] {
            Some(g) => g
                .add_assign(&delta)
                .expect("gradient shape drifted from node shape"),
            slot @ None => *slot = Some(delta),
        }
    }

    fn adjoint(&self, op: Op, out: usize, go: &Matrix, grads: &mut Vec<Option<Matrix>>) {
        match op {
            Op::Matmul { a, b } => {
                let (va, vb) = (&self.vals[a], &self.vals[b]);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                add_matmul_a_bt(&mut ga, go, vb);
                Self::accumulate(grads, a, ga);
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                add_matmul_at_b(&mut gb, va, go);
                Self::accumulate(grads, b, gb);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, a, go.clone());
                Self::accumulate(grads, b, go.clone());
            }
            Op::Sub { a, b } => {
                Self::accumulate(grads, a, go.clone());
                Self::accumulate(grads, b, go.affine(-1.0, 0.0));
            }
            Op::Hadamard { a, b } => {
                let ga = go.hadamard(&self.vals[b]).expect("hadamard adjoint");
                let gb = go.hadamard(&self.vals[a]).expect("hadamard adjoint");
                Self::accumulate(grads, a, ga);
                Self::accumulate(grads, b, gb);
            }
            Op::Div { a, b } => {
                let vb = &self.vals[b];
                let ga = go.div(vb).expect("div adjoint");
                // d(a/b)/db = -a/b^2 = -out/b, and out = vals[out] still live.
                let gb = go
                    .hadamard(&self.vals[out])
                    .and_then(|m| m.div(vb))
                    .expect("div adjoint")
                    .affine(-1.0, 0.0);
                Self::accumulate(grads, a, ga);
                Self::accumulate(grads, b, gb);
            }
            Op::AddBias { m, bias } => {
                Self::accumulate(grads, m, go.clone());
                let mut gb = Matrix::zeros(1, go.cols());
                for r in 0..go.rows() {
                    for (acc, v) in gb.row_mut(0).iter_mut().zip(go.row(r)) {
                        *acc += v;
                    }
                }
                Self::accumulate(grads, bias, gb);
            }
            Op::Affine { a, k } => {
                Self::accumulate(grads, a, go.affine(k, 0.0));
            }
            Op::Sigmoid { a } => {
                let vo = &self.vals[out];
                let d = vo.map(|y| y * (1.0 - y));
                Self::accumulate(grads, a, go.hadamard(&d).expect("sigmoid adjoint"));
            }
            Op::Tanh { a } => {
                let vo = &self.vals[out];
                let d = vo.map(|y| 1.0 - y * y);
                Self::accumulate(grads, a, go.hadamard(&d).expect("tanh adjoint"));
            }
            Op::Relu { a } => {
                let va = &self.vals[a];
                let d = va.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                Self::accumulate(grads, a, go.hadamard(&d).expect("relu adjoint"));
            }
            Op::Exp { a } => {
                let va = &self.vals[a];
                let vo = &self.vals[out];
                let mut g = go.hadamard(vo).expect("exp adjoint");
                for (gv, &x) in g.data_mut().iter_mut().zip(va.data()) {
                    if !(-math::EXP_CLAMP..=math::EXP_CLAMP).contains(&x) {
                        *gv = 0.0;
                    }
                }
                Self::accumulate(grads, a, g);
            }
            Op::Ln { a } => {
                let ga = go.div(&self.vals[a]).expect("ln adjoint");
                Self::accumulate(grads, a, ga);
            }
            Op::Sqrt { a } => {
                let vo = &self.vals[out];
                let d = vo.map(|y| if y == 0.0 { 0.0 } else { 0.5 / y });
                Self::accumulate(grads, a, go.hadamard(&d).expect("sqrt adjoint"));
            }
            Op::ClampMin { a, floor } => {
                let va = &self.vals[a];
                let d = va.map(|x| if x >= floor { 1.0 } else { 0.0 });
                Self::accumulate(grads, a, go.hadamard(&d).expect("clamp adjoint"));
            }
            Op::ConcatCols { a, b } => {
                let ca = self.vals[a].cols();
                let ga = go.slice_cols(0, ca).expect("concat adjoint");
                let gb = go.slice_cols(ca, go.cols()).expect("concat adjoint");
                Self::accumulate(grads, a, ga);
                Self::accumulate(grads, b, gb);
            }
            Op::SliceCols { a, start } => {
                let (r, c) = (self.vals[a].rows(), self.vals[a].cols());
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    for (j, &v) in go.row(row).iter().enumerate() {
                        ga.set(row, start + j, v);
                    }
                }
                Self::accumulate(grads, a, ga);
            }
            Op::SumAll { a } => {
                let (r, c) = self.vals[a].shape();
                Self::accumulate(grads, a, Matrix::filled(r, c, go.item()));
            }
            Op::SumRows { a } => {
                let (r, c) = self.vals[a].shape();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    let g = go.get(row, 0);
                    for v in ga.row_mut(row) {
                        *v = g;
                    }
                }
                Self::accumulate(grads, a, ga);
            }
            Op::QuatCanonRows { a } => {
                let va = &self.vals[a];
                let mut ga = Matrix::zeros(va.rows(), 2);
                for r in 0..va.rows() {
                    let (z, w) = (va.get(r, 0), va.get(r, 1));
                    let n = math::hypot(z, w);
                    if n < QUAT_DEGENERATE_NORM {
                        continue; // output pinned to identity; no gradient
                    }
                    let s = if w < 0.0 { -1.0 } else { 1.0 };
                    let (uz, uw) = (z / n, w / n);
                    let (gz, gw) = (go.get(r, 0), go.get(r, 1));
                    let proj = uz * gz + uw * gw;
                    ga.set(r, 0, s / n * (gz - uz * proj));
                    ga.set(r, 1, s / n * (gw - uw * proj));
                }
                Self::accumulate(grads, a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    const FD_H: f64 = 1e-5;
    const FD_TOL: f64 = 1e-5;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Finite-difference check of d(f)/d(inputs[0]) against the tape.
    fn check_grad(inputs: &[Matrix], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.wrt(vars[0]);

        let target = &inputs[0];
        for r in 0..target.rows() {
            for c in 0..target.cols() {
                let eval = |delta: f64| {
                    let mut perturbed: Vec<Matrix> = inputs.to_vec();
                    let v = perturbed[0].get(r, c);
                    perturbed[0].set(r, c, v + delta);
                    let mut t = Tape::new();
                    let vs: Vec<Var> = perturbed.iter().map(|m| t.leaf(m.clone())).collect();
                    let l = f(&mut t, &vs);
                    t.value(l).item()
                };
                let fd = (eval(FD_H) - eval(-FD_H)) / (2.0 * FD_H);
                let an = analytic.get(r, c);
                assert!(
                    rel_err(fd, an) <= FD_TOL,
                    "grad mismatch at ({},{}): fd={} analytic={}",
                    r,
                    c,
                    fd,
                    an
                );
            }
        }
    }

    fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(3.0));
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum_all(sq);
        assert_eq!(tape.value(loss).item(), 9.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).item(), 6.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(2.0));
        let unused = tape.leaf(Matrix::zeros(3, 4));
        let loss = tape.hadamard(x, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(unused), Matrix::zeros(3, 4));
        assert!(grads.try_wrt(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        let y = tape.relu(x);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let w = random_matrix(&mut rng, 3, 4);
        let x = random_matrix(&mut rng, 4, 2);
        check_grad(&[w, x], |t, vs| {
            let prod = t.matmul(vs[0], vs[1]).unwrap();
            let act = t.sigmoid(prod);
            t.sum_all(act)
        });
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        type Build = fn(&mut Tape, &[Var]) -> Var;
        // Each case: input shapes and a scalar-producing graph.
        let cases: Vec<(Vec<(usize, usize)>, Build)> = vec![
            (vec![(2, 3), (3, 2)], |t, vs| {
                let m = t.matmul(vs[0], vs[1]).unwrap();
                t.sum_all(m)
            }),
            (vec![(2, 2), (2, 2)], |t, vs| {
                let m = t.add(vs[0], vs[1]).unwrap();
                t.sum_all(m)
            }),
            (vec![(2, 2), (2, 2)], |t, vs| {
                let m = t.sub(vs[0], vs[1]).unwrap();
                let sq = t.hadamard(m, m).unwrap();
                t.sum_all(sq)
            }),
            (vec![(2, 2), (2, 2)], |t, vs| {
                let m = t.hadamard(vs[0], vs[1]).unwrap();
                t.sum_all(m)
            }),
            (vec![(2, 2), (2, 2)], |t, vs| {
                // Shift denominator away from zero for a stable check.
                let b = t.affine(vs[1], 1.0, 3.0);
                let m = t.div(vs[0], b).unwrap();
                t.sum_all(m)
            }),
            (vec![(3, 2), (1, 2)], |t, vs| {
                let m = t.add_bias(vs[0], vs[1]).unwrap();
                let s = t.sigmoid(m);
                t.sum_all(s)
            }),
            (vec![(2, 2)], |t, vs| {
                let m = t.affine(vs[0], -1.7, 0.3);
                t.sum_all(m)
            }),
            (vec![(2, 2)], |t, vs| {
                let m = t.tanh(vs[0]);
                t.sum_all(m)
            }),
            (vec![(2, 2)], |t, vs| {
                let m = t.exp(vs[0]);
                t.sum_all(m)
            }),
            (vec![(2, 2)], |t, vs| {
                // Keep strictly positive for ln/sqrt.
                let p = t.affine(vs[0], 0.25, 2.0);
                let l = t.ln(p);
                t.sum_all(l)
            }),
            (vec![(2, 2)], |t, vs| {
                let p = t.affine(vs[0], 0.25, 2.0);
                let s = t.sqrt(p);
                t.sum_all(s)
            }),
            (vec![(2, 2)], |t, vs| {
                let m = t.clamp_min(vs[0], 0.3);
                t.sum_all(m)
            }),
            (vec![(2, 2), (2, 3)], |t, vs| {
                let m = t.concat_cols(vs[0], vs[1]).unwrap();
                let s = t.tanh(m);
                t.sum_all(s)
            }),
            (vec![(2, 4)], |t, vs| {
                let m = t.slice_cols(vs[0], 1, 3).unwrap();
                let s = t.sigmoid(m);
                t.sum_all(s)
            }),
            (vec![(3, 2)], |t, vs| {
                let m = t.sum_rows(vs[0]);
                let s = t.tanh(m);
                t.sum_all(s)
            }),
            (vec![(3, 2)], |t, vs| {
                let q = t.quat_canon_rows(vs[0]).unwrap();
                let s = t.tanh(q);
                t.sum_all(s)
            }),
        ];
        for (shapes, build) in cases {
            let inputs: Vec<Matrix> = shapes
                .iter()
                .map(|&(r, c)| random_matrix(&mut rng, r, c))
                .collect();
            check_grad(&inputs, build);
        }
    }

    #[test]
    fn relu_gradient_masks_negative_inputs() {
        let m = Matrix::from_vec(1, 3, vec![-2.0, 0.5, 3.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(m);
        let r = tape.relu(x);
        let loss = tape.sum_all(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn exp_clamp_zeroes_gradient_outside_range() {
        let m = Matrix::from_vec(1, 3, vec![50.0, 0.5, -50.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(m);
        let e = tape.exp(x);
        let loss = tape.sum_all(e);
        assert!(tape.value(loss).is_finite());
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(x);
        assert_eq!(g.get(0, 0), 0.0);
        assert!((g.get(0, 1) - (0.5f64).exp()).abs() < 1e-12);
        assert_eq!(g.get(0, 2), 0.0);
    }

    #[test]
    fn degenerate_quaternion_row_counts_and_pins_identity() {
        let m = Matrix::from_vec(2, 2, vec![0.0, 0.0, 3.0, -4.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(m);
        let q = tape.quat_canon_rows(x).unwrap();
        assert_eq!(tape.quat_degenerate_count(), 1);
        let v = tape.value(q);
        assert_eq!(v.row(0), &[0.0, 1.0]);
        // Canonical sign flips the row with negative w.
        assert!((v.get(1, 0) + 0.6).abs() < 1e-12);
        assert!((v.get(1, 1) - 0.8).abs() < 1e-12);
        let loss = tape.sum_all(q);
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(x);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn reused_node_accumulates_gradient() {
        // loss = sum(x) + sum(x*x): d/dx = 1 + 2x
        let m = Matrix::from_vec(1, 2, vec![1.5, -0.5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(m);
        let s1 = tape.sum_all(x);
        let sq = tape.hadamard(x, x).unwrap();
        let s2 = tape.sum_all(sq);
        let loss = tape.add(s1, s2).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(x);
        assert!((g.get(0, 0) - 4.0).abs() < 1e-12);
        assert!((g.get(0, 1) - 0.0).abs() < 1e-12);
    }
}
