//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Forward evaluation records every operation on a tape; [`Tape::backward`]
//! replays it in reverse, accumulating gradients into the leaves. All model
//! parameters are 2-d tables (vectors are `1×n`), so a single `Array2<f64>`
//! node type covers the whole pipeline.
//!
//! The op set is deliberately small: sparse propagation, gathers, affine
//! maps, pointwise nonlinearities, and two fused heads (mixture pooling and
//! the weighted cross-entropy loss) whose adjoints are hand-derived and
//! covered by finite-difference tests.

use std::ops::Range;
use std::rc::Rc;

use ndarray::{Array2, ArrayView2};

use crate::sparse::CsrMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

/// Probability clamp applied before logarithms in the loss.
pub const PROB_CLAMP: f64 = 1e-7;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    /// `x · wᵀ` with `x: k×d`, `w: n×d`.
    MatMulT(Var, Var),
    /// `M · x` with a constant matrix `M`.
    MatMulConst(Rc<Array2<f64>>, Var),
    /// `S · x` for a fixed sparse operator.
    SpMM(Rc<CsrMatrix>, Var),
    /// `Sᵀ · x` for a fixed sparse operator.
    SpMMT(Rc<CsrMatrix>, Var),
    Gather(Var, Rc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    /// `(k×n) + broadcast row (1×n)`.
    AddRow(Var, Var),
    MaskNegInf(Var, Rc<Vec<(usize, usize)>>),
    MixturePool {
        logits: Var,
        groups: Rc<Vec<Range<usize>>>,
        fallback: Var,
        temps: Rc<Vec<f64>>,
    },
    BdceLoss {
        probs: Var,
        positives: Rc<Vec<Vec<bool>>>,
        weights: Rc<Array2<f64>>,
        theta: f64,
    },
    /// Scalar probe `Σ x² / 2`.
    SumSqHalf(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(stable_sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// `x · wᵀ`
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let v = self.nodes[x.0].value.dot(&self.nodes[w.0].value.t());
        self.push(v, Op::MatMulT(x, w))
    }

    /// `M · x` with constant `M` (no gradient flows into `M`).
    pub fn matmul_const(&mut self, m: Rc<Array2<f64>>, x: Var) -> Var {
        let v = m.dot(&self.nodes[x.0].value);
        self.push(v, Op::MatMulConst(m, x))
    }

    pub fn spmm(&mut self, s: Rc<CsrMatrix>, x: Var) -> Var {
        let v = s.mul_dense(&self.nodes[x.0].value);
        self.push(v, Op::SpMM(s, x))
    }

    pub fn spmm_t(&mut self, s: Rc<CsrMatrix>, x: Var) -> Var {
        let v = s.mul_dense_transposed(&self.nodes[x.0].value);
        self.push(v, Op::SpMMT(s, x))
    }

    pub fn gather(&mut self, src: Var, rows: Rc<Vec<usize>>) -> Var {
        let table = &self.nodes[src.0].value;
        let d = table.ncols();
        let mut v = Array2::<f64>::zeros((rows.len(), d));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&table.row(r));
        }
        self.push(v, Op::Gather(src, rows))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty());
        let d = self.nodes[parts[0].0].value.ncols();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut v = Array2::<f64>::zeros((total, d));
        let mut at = 0;
        for p in &parts {
            let block = &self.nodes[p.0].value;
            v.slice_mut(ndarray::s![at..at + block.nrows(), ..])
                .assign(block);
            at += block.nrows();
        }
        self.push(v, Op::ConcatRows(parts))
    }

    /// Adds a `1×n` row to every row of a `k×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.nodes[row.0].value.row(0).to_owned();
        let mut v = self.nodes[x.0].value.clone();
        for mut out in v.rows_mut() {
            out += &r;
        }
        self.push(v, Op::AddRow(x, row))
    }

    /// Replaces the listed positions with `-inf`. Downstream pooling treats
    /// them as excluded; no gradient flows through masked entries.
    pub fn mask_neg_inf(&mut self, x: Var, positions: Rc<Vec<(usize, usize)>>) -> Var {
        let mut v = self.nodes[x.0].value.clone();
        for &(r, c) in positions.iter() {
            v[[r, c]] = f64::NEG_INFINITY;
        }
        self.push(v, Op::MaskNegInf(x, positions))
    }

    /// Mixture pooling over row groups of a logit matrix.
    ///
    /// For each group (one entity's neighbors) and each column, combines the
    /// non-masked entries via max, mean, and per-head temperature softmax,
    /// returning the pre-sigmoid sum. Columns whose entries are all masked
    /// (and entirely empty groups) fall back to the bias-only pseudo-neighbor
    /// row: `(H + 2) · fallback`.
    pub fn mixture_pool(
        &mut self,
        logits: Var,
        groups: Rc<Vec<Range<usize>>>,
        fallback: Var,
        temps: Rc<Vec<f64>>,
    ) -> Var {
        let x = &self.nodes[logits.0].value;
        let fb = &self.nodes[fallback.0].value;
        let n = x.ncols();
        let mut out = Array2::<f64>::zeros((groups.len(), n));
        for (g, range) in groups.iter().enumerate() {
            for p in 0..n {
                out[[g, p]] =
                    pool_column(&x.view(), range.clone(), p, &temps, fb[[0, p]]).pre_sigmoid;
            }
        }
        self.push(
            out,
            Op::MixturePool {
                logits,
                groups,
                fallback,
                temps,
            },
        )
    }

    /// Weighted binary cross-entropy over probability rows.
    ///
    /// `positives[b][p]` marks the positive cells of row `b`; every other
    /// cell is a negative weighted by `theta · weights[b][p]`, where the
    /// weight matrix is a constant (no gradient flows through it).
    /// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
    /// the logarithms.
    pub fn bdce_loss(
        &mut self,
        probs: Var,
        positives: Rc<Vec<Vec<bool>>>,
        weights: Rc<Array2<f64>>,
        theta: f64,
    ) -> Var {
        let s = &self.nodes[probs.0].value;
        let mut total = 0.0;
        for b in 0..s.nrows() {
            for p in 0..s.ncols() {
                let v = clamp_prob(s[[b, p]]);
                if positives[b][p] {
                    total -= v.ln();
                } else {
                    total -= theta * weights[[b, p]] * (1.0 - v).ln();
                }
            }
        }
        let v = Array2::from_elem((1, 1), total);
        self.push(
            v,
            Op::BdceLoss {
                probs,
                positives,
                weights,
                theta,
            },
        )
    }

    /// Scalar probe `Σ x² / 2`, used by gradient checks.
    pub fn sum_sq_half(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].value.iter().map(|v| v * v).sum::<f64>() / 2.0;
        self.push(Array2::from_elem((1, 1), total), Op::SumSqHalf(x))
    }

    /// Reverse pass from the given seed gradients.
    pub fn backward(&self, seeds: Vec<(Var, Array2<f64>)>) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, seed) in seeds {
            assert_eq!(
                seed.dim(),
                self.nodes[v.0].value.dim(),
                "seed shape mismatch"
            );
            accumulate(&mut grads, v.0, seed);
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g); // retain for the caller
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a.0, g.clone());
                    accumulate(&mut grads, b.0, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b.0, g.mapv(|x| -x));
                    accumulate(&mut grads, a.0, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads, a.0, ga);
                    accumulate(&mut grads, b.0, gb);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, a.0, g.mapv(|x| c * x));
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, a.0, &g * &mask);
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[idx].value;
                    let ds = s.mapv(|v| v * (1.0 - v));
                    accumulate(&mut grads, a.0, &g * &ds);
                }
                Op::MatMulT(x, w) => {
                    let gx = g.dot(&self.nodes[w.0].value);
                    let gw = g.t().dot(&self.nodes[x.0].value);
                    accumulate(&mut grads, x.0, gx);
                    accumulate(&mut grads, w.0, gw);
                }
                Op::MatMulConst(m, x) => {
                    accumulate(&mut grads, x.0, m.t().dot(&g));
                }
                Op::SpMM(s, x) => {
                    accumulate(&mut grads, x.0, s.mul_dense_transposed(&g));
                }
                Op::SpMMT(s, x) => {
                    accumulate(&mut grads, x.0, s.mul_dense(&g));
                }
                Op::Gather(src, rows) => {
                    let dims = self.nodes[src.0].value.dim();
                    let mut gs = Array2::<f64>::zeros(dims);
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = gs.row_mut(r);
                        dst += &g.row(i);
                    }
                    accumulate(&mut grads, src.0, gs);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.nrows();
                        let slice = g.slice(ndarray::s![at..at + rows, ..]).to_owned();
                        accumulate(&mut grads, p.0, slice);
                        at += rows;
                    }
                }
                Op::AddRow(x, row) => {
                    let mut grow = Array2::<f64>::zeros((1, g.ncols()));
                    for r in g.rows() {
                        let mut dst = grow.row_mut(0);
                        dst += &r;
                    }
                    accumulate(&mut grads, row.0, grow);
                    accumulate(&mut grads, x.0, g);
                }
                Op::MaskNegInf(x, positions) => {
                    let mut gx = g;
                    for &(r, c) in positions.iter() {
                        gx[[r, c]] = 0.0;
                    }
                    accumulate(&mut grads, x.0, gx);
                }
                Op::MixturePool {
                    logits,
                    groups,
                    fallback,
                    temps,
                } => {
                    let x = &self.nodes[logits.0].value;
                    let fb = &self.nodes[fallback.0].value;
                    let mut gx = Array2::<f64>::zeros(x.dim());
                    let mut gfb = Array2::<f64>::zeros(fb.dim());
                    for (gi, range) in groups.iter().enumerate() {
                        for p in 0..x.ncols() {
                            let up = g[[gi, p]];
                            if up == 0.0 {
                                continue;
                            }
                            let pooled =
                                pool_column(&x.view(), range.clone(), p, temps, fb[[0, p]]);
                            match pooled.grad {
                                ColumnGrad::Fallback(c) => gfb[[0, p]] += up * c,
                                ColumnGrad::Entries(entries) => {
                                    for (row, d) in entries {
                                        gx[[row, p]] += up * d;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, logits.0, gx);
                    accumulate(&mut grads, fallback.0, gfb);
                }
                Op::BdceLoss {
                    probs,
                    positives,
                    weights,
                    theta,
                } => {
                    let up = g[[0, 0]];
                    let s = &self.nodes[probs.0].value;
                    let mut gs = Array2::<f64>::zeros(s.dim());
                    for b in 0..s.nrows() {
                        for p in 0..s.ncols() {
                            let raw = s[[b, p]];
                            // clamped region has zero slope
                            if raw <= PROB_CLAMP || raw >= 1.0 - PROB_CLAMP {
                                continue;
                            }
                            gs[[b, p]] = if positives[b][p] {
                                -up / raw
                            } else {
                                up * theta * weights[[b, p]] / (1.0 - raw)
                            };
                        }
                    }
                    accumulate(&mut grads, probs.0, gs);
                }
                Op::SumSqHalf(x) => {
                    let gx = self.nodes[x.0].value.mapv(|v| v * g[[0, 0]]);
                    accumulate(&mut grads, x.0, gx);
                }
            }
        }

        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], idx: usize, delta: Array2<f64>) {
    match &mut grads[idx] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Pooled value of one column within one row group, plus its local gradient.
pub(crate) struct PooledColumn {
    pub pre_sigmoid: f64,
    pub s_max: f64,
    pub s_avg: f64,
    pub s_weighted: f64,
    pub grad: ColumnGrad,
}

pub(crate) enum ColumnGrad {
    /// All entries masked (or group empty): value came from the fallback row.
    Fallback(f64),
    /// `(row, d pre_sigmoid / d x[row, p])` for each contributing row.
    Entries(Vec<(usize, f64)>),
}

/// Max + mean + multi-head softmax pooling of `x[range, p]`, skipping `-inf`
/// entries. Hand-derived adjoint; checked against finite differences.
pub(crate) fn pool_column(
    x: &ArrayView2<f64>,
    range: Range<usize>,
    p: usize,
    temps: &[f64],
    fallback: f64,
) -> PooledColumn {
    let heads = temps.len() as f64;
    let valid: Vec<usize> = range.filter(|&r| x[[r, p]].is_finite()).collect();
    if valid.is_empty() {
        return PooledColumn {
            pre_sigmoid: (heads + 2.0) * fallback,
            s_max: fallback,
            s_avg: fallback,
            s_weighted: heads * fallback,
            grad: ColumnGrad::Fallback(heads + 2.0),
        };
    }

    let vals: Vec<f64> = valid.iter().map(|&r| x[[r, p]]).collect();
    let count = vals.len() as f64;

    let mut max_idx = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[max_idx] {
            max_idx = i;
        }
    }
    let s_max = vals[max_idx];
    let s_avg = vals.iter().sum::<f64>() / count;

    let mut s_weighted = 0.0;
    let mut grad: Vec<(usize, f64)> = valid.iter().map(|&r| (r, 0.0)).collect();
    for &h in temps {
        // softmax over neighbors at temperature h, shifted for stability
        let shift = vals.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(h * v));
        let exps: Vec<f64> = vals.iter().map(|&v| (h * v - shift).exp()).collect();
        let z: f64 = exps.iter().sum();
        let w: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mean_w: f64 = w.iter().zip(&vals).map(|(wi, vi)| wi * vi).sum();
        s_weighted += mean_w;
        for (i, gslot) in grad.iter_mut().enumerate() {
            gslot.1 += w[i] * (1.0 + h * (vals[i] - mean_w));
        }
    }

    grad[max_idx].1 += 1.0; // max route
    for gslot in grad.iter_mut() {
        gslot.1 += 1.0 / count; // mean route
    }

    PooledColumn {
        pre_sigmoid: s_weighted + s_max + s_avg,
        s_max,
        s_avg,
        s_weighted,
        grad: ColumnGrad::Entries(grad),
    }
}
