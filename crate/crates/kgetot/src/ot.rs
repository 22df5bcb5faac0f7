//! Optimal-transport alignment of view-specific embeddings.
//!
//! Two embedding tables of the same objects, produced by different views,
//! live in heterogeneous spaces. Treating the rows as uniform discrete
//! distributions, the entropically regularized transport plan between them
//! is solved by log-domain Sinkhorn iteration on a cosine-distance cost.
//! The source table is then pushed through the plan (barycentric projection)
//! and added to the destination table, yielding one fused table per object
//! kind.
//!
//! The plan is a constant during training: gradients flow through the
//! projected source rows and the destination rows, never through the
//! Sinkhorn iterations.

use std::rc::Rc;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Weights of a discrete distribution: nonnegative, summing to one.
#[derive(Clone, Debug)]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "distribution weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "distribution weights sum to {sum}, expected 1"
            )));
        }
        Ok(DiscreteDistribution { weights })
    }

    pub fn uniform(n: usize) -> Self {
        DiscreteDistribution {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Solved transport plan with its diagnostics.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// `n×m` nonnegative matrix with row sums `μ` and column sums `ν`.
    pub matrix: Array2<f64>,
    /// Achieved transport cost `⟨T, C⟩`.
    pub cost: f64,
    /// Sinkhorn iterations performed.
    pub iterations: usize,
    /// Largest marginal violation at termination.
    pub marginal_residual: f64,
}

/// Sinkhorn solver parameters.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.05,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

/// Cosine-distance cost matrix between the rows of two tables.
///
/// `C[i][j] = 1 − ⟨s_i, d_j⟩ / (‖s_i‖‖d_j‖)`, so entries lie in `[0, 2]`.
/// A zero-norm row has no direction; its costs are set to 1 uniformly.
pub fn cost_matrix(source: &ArrayView2<f64>, dest: &ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(source.ncols(), dest.ncols(), "embedding dimensions differ");
    let n = source.nrows();
    let m = dest.nrows();
    let src_norms: Vec<f64> = (0..n).map(|i| row_norm(source, i)).collect();
    let dst_norms: Vec<f64> = (0..m).map(|j| row_norm(dest, j)).collect();
    let degenerate = src_norms.iter().chain(&dst_norms).filter(|&&x| x == 0.0).count();
    if degenerate > 0 {
        log::warn!("cost_matrix: {degenerate} zero-norm rows scored at maximal uncertainty");
    }

    let mut c = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            c[[i, j]] = if src_norms[i] == 0.0 || dst_norms[j] == 0.0 {
                1.0
            } else {
                let dot: f64 = source.row(i).dot(&dest.row(j));
                // guard rounding drift just outside [0, 2]
                (1.0 - dot / (src_norms[i] * dst_norms[j])).clamp(0.0, 2.0)
            };
        }
    }
    c
}

fn row_norm(x: &ArrayView2<f64>, i: usize) -> f64 {
    x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Entropic optimal transport via log-domain Sinkhorn iteration.
///
/// Alternates the dual-potential updates
/// `f_i ← ε (log μ_i − LSE_j((g_j − C_ij)/ε))` and the symmetric update for
/// `g`, recovering `T_ij = exp((f_i + g_j − C_ij)/ε)`. Stops when the worst
/// marginal violation drops below `tol`; hitting `max_iters` first returns
/// the plan with its residual and a warning rather than an error.
pub fn sinkhorn(
    cost: &Array2<f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    if mu.len() != n || nu.len() != m {
        return Err(Error::InvalidArgument(format!(
            "cost is {n}×{m} but marginals are {}×{}",
            mu.len(),
            nu.len()
        )));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite cost entries".into()));
    }

    let eps = cfg.epsilon;
    let log_mu: Vec<f64> = mu.weights().iter().map(|&w| safe_ln(w)).collect();
    let log_nu: Vec<f64> = nu.weights().iter().map(|&w| safe_ln(w)).collect();

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for iter in 0..cfg.max_iters {
        for i in 0..n {
            let lse = logsumexp(m, |j| (g[j] - cost[[i, j]]) / eps);
            f[i] = if log_mu[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_mu[i] - lse)
            };
        }
        for j in 0..m {
            let lse = logsumexp(n, |i| (f[i] - cost[[i, j]]) / eps);
            g[j] = if log_nu[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_nu[j] - lse)
            };
        }
        iterations = iter + 1;
        residual = marginal_residual(&f, &g, cost, eps, mu.weights(), nu.weights());
        if residual < cfg.tol {
            break;
        }
    }

    if residual >= cfg.tol {
        log::warn!(
            "sinkhorn stopped at {iterations} iterations with residual {residual:.3e} (tol {:.1e})",
            cfg.tol
        );
    }

    let mut plan = Array2::<f64>::zeros((n, m));
    let mut total_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let lp = (f[i] + g[j] - cost[[i, j]]) / eps;
            let p = if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() };
            plan[[i, j]] = p;
            total_cost += p * cost[[i, j]];
        }
    }

    Ok(TransportPlan {
        matrix: plan,
        cost: total_cost,
        iterations,
        marginal_residual: residual,
    })
}

fn safe_ln(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

fn logsumexp(len: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for i in 0..len {
        max = max.max(f(i));
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for i in 0..len {
        sum += (f(i) - max).exp();
    }
    max + sum.ln()
}

fn marginal_residual(
    f: &[f64],
    g: &[f64],
    cost: &Array2<f64>,
    eps: f64,
    mu: &[f64],
    nu: &[f64],
) -> f64 {
    let n = f.len();
    let m = g.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let lse = logsumexp(m, |j| (f[i] + g[j] - cost[[i, j]]) / eps);
        let row_sum = if lse == f64::NEG_INFINITY { 0.0 } else { lse.exp() };
        worst = worst.max((row_sum - mu[i]).abs());
    }
    for j in 0..m {
        let lse = logsumexp(n, |i| (f[i] + g[j] - cost[[i, j]]) / eps);
        let col_sum = if lse == f64::NEG_INFINITY { 0.0 } else { lse.exp() };
        worst = worst.max((col_sum - nu[j]).abs());
    }
    worst
}

/// How the projected source is formed from the plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Projection {
    /// `Ê_j = Σ_i T_ij E^s_i / ν_j` — scale-stable; the default.
    Barycentric,
    /// `Ê = Tᵀ E^s` without the marginal normalization.
    Literal,
}

/// Alignment parameters.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct OtaConfig {
    pub sinkhorn: SinkhornConfig,
    /// Above this source-row count the transport solve is skipped.
    pub cap: usize,
    pub projection: Projection,
}

impl Default for OtaConfig {
    fn default() -> Self {
        OtaConfig {
            sinkhorn: SinkhornConfig::default(),
            cap: 4096,
            projection: Projection::Barycentric,
        }
    }
}

/// Fixed linear alignment derived from one solved plan (or a fallback).
#[derive(Clone, Debug)]
pub enum Alignment {
    /// `Z = M·E_s + E_d` with `M` folding the plan and projection together.
    Transport {
        projector: Rc<Array2<f64>>,
        plan: TransportPlan,
    },
    /// Cap exceeded with `n = m`: `Z = E_s + E_d`.
    Identity,
    /// Cap exceeded with `n ≠ m`: `Z = E_d`.
    DestinationOnly,
}

/// Solves the plan for one source/destination pair of tables.
///
/// Runs on plain values; the result is treated as a constant by the training
/// tape. Uniform marginals over rows on both sides.
pub fn ota_plan(
    source: &ArrayView2<f64>,
    dest: &ArrayView2<f64>,
    cfg: &OtaConfig,
) -> Result<Alignment> {
    let n = source.nrows();
    let m = dest.nrows();
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty embedding table".into()));
    }
    if n > cfg.cap {
        log::warn!("ota: {n} source rows exceed cap {}; falling back", cfg.cap);
        return Ok(if n == m {
            Alignment::Identity
        } else {
            Alignment::DestinationOnly
        });
    }

    let c = cost_matrix(source, dest);
    let mu = DiscreteDistribution::uniform(n);
    let nu = DiscreteDistribution::uniform(m);
    let plan = sinkhorn(&c, &mu, &nu, &cfg.sinkhorn)?;

    let mut projector = plan.matrix.t().to_owned(); // m×n
    if cfg.projection == Projection::Barycentric {
        for (j, mut row) in projector.rows_mut().into_iter().enumerate() {
            let nu_j = nu.weights()[j];
            row.mapv_inplace(|v| v / nu_j);
        }
    }

    Ok(Alignment::Transport {
        projector: Rc::new(projector),
        plan,
    })
}

/// Applies a solved alignment on the tape: `Z = project(E_s) + E_d`.
pub fn ota_apply(tape: &mut Tape, alignment: &Alignment, source: Var, dest: Var) -> Var {
    match alignment {
        Alignment::Transport { projector, .. } => {
            let projected = tape.matmul_const(Rc::clone(projector), source);
            tape.add(projected, dest)
        }
        Alignment::Identity => tape.add(source, dest),
        Alignment::DestinationOnly => dest,
    }
}

/// Value-level alignment: plan + apply in one call.
pub fn ota_align(
    source: &ArrayView2<f64>,
    dest: &ArrayView2<f64>,
    cfg: &OtaConfig,
) -> Result<Array2<f64>> {
    let alignment = ota_plan(source, dest, cfg)?;
    let mut tape = Tape::new();
    let s = tape.leaf(source.to_owned());
    let d = tape.leaf(dest.to_owned());
    let z = ota_apply(&mut tape, &alignment, s, d);
    Ok(tape.value(z).clone())
}
