//! Distribution-weighted binary cross-entropy.
//!
//! Training treats every (entity, type) pair absent from the train split as
//! a negative, but absent pairs are often just unobserved. The negative term
//! is therefore weighted by a bell-shaped density of the predicted score:
//! negatives scored near 0 are easy, negatives scored near 1 are likely
//! false, and both ends get down-weighted relative to the middle. The weight
//! acts as a constant coefficient — no gradient flows through the density.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::clamp_prob;

/// Density applied to negative scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    Beta { alpha: f64, beta: f64 },
    Cauchy { location: f64, scale: f64 },
    Gumbel { location: f64, scale: f64 },
    Laplace { location: f64, scale: f64 },
    Constant,
}

impl WeightFn {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightFn::Beta { alpha, beta } if alpha <= 0.0 || beta <= 0.0 => Err(
                Error::InvalidArgument("beta shape parameters must be positive".into()),
            ),
            WeightFn::Cauchy { scale, .. }
            | WeightFn::Gumbel { scale, .. }
            | WeightFn::Laplace { scale, .. }
                if scale <= 0.0 =>
            {
                Err(Error::InvalidArgument("scale must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Loss hyperparameters: the global negative weight and the density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub theta: f64,
    pub weight_fn: WeightFn,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            theta: 0.7,
            weight_fn: WeightFn::Beta {
                alpha: 2.0,
                beta: 2.0,
            },
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta <= 0.0 {
            return Err(Error::InvalidArgument("theta must be positive".into()));
        }
        self.weight_fn.validate()
    }
}

/// Evaluates the selected density at a probability.
pub fn weight_pdf(x: f64, weight_fn: &WeightFn) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!(
            "weight_pdf expects x in [0, 1], got {x}"
        )));
    }
    weight_fn.validate()?;
    Ok(match *weight_fn {
        WeightFn::Beta { alpha, beta } => beta_pdf(x, alpha, beta),
        WeightFn::Cauchy { location, scale } => {
            let z = (x - location) / scale;
            1.0 / (std::f64::consts::PI * scale * (1.0 + z * z))
        }
        WeightFn::Gumbel { location, scale } => {
            let z = (x - location) / scale;
            (-(z + (-z).exp())).exp() / scale
        }
        WeightFn::Laplace { location, scale } => {
            (-(x - location).abs() / scale).exp() / (2.0 * scale)
        }
        WeightFn::Constant => 1.0,
    })
}

fn beta_pdf(x: f64, alpha: f64, beta: f64) -> f64 {
    // boundary conventions: x^0 = 1 even at x = 0
    let num = pow_or_boundary(x, alpha - 1.0) * pow_or_boundary(1.0 - x, beta - 1.0);
    let ln_b = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
    num / ln_b.exp()
}

fn pow_or_boundary(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if x == 0.0 {
        if e > 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        x.powf(e)
    }
}

/// Lanczos approximation of `ln Γ(x)` for positive `x` (g = 7, n = 9).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Value-level weighted cross-entropy over a batch of score rows.
///
/// Positives contribute `−log s`; every other cell of the row contributes
/// `−θ·f(s′)·log(1 − s′)` with the density evaluated at the score itself
/// (full negative set, no sampling). Scores are clamped before the logs.
pub fn bdce_loss(
    scores: &ArrayView2<f64>,
    positives: &[Vec<usize>],
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    if scores.nrows() != positives.len() {
        return Err(Error::InvalidArgument(
            "one positive set per score row required".into(),
        ));
    }
    let mut total = 0.0;
    for (b, pos) in positives.iter().enumerate() {
        let mut is_pos = vec![false; scores.ncols()];
        for &p in pos {
            if p >= scores.ncols() {
                return Err(Error::InvalidArgument(format!(
                    "positive index {p} out of range"
                )));
            }
            is_pos[p] = true;
        }
        for p in 0..scores.ncols() {
            let s = clamp_prob(scores[[b, p]]);
            if is_pos[p] {
                total -= s.ln();
            } else {
                total -= cfg.theta * weight_pdf(s, &cfg.weight_fn)? * (1.0 - s).ln();
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::Numerical("non-finite loss".into()));
    }
    Ok(total)
}

/// Per-cell negative weights for the tape-level loss, evaluated at the
/// current score values (stop-gradient). Positive cells get weight zero.
pub fn negative_weights(
    scores: &ArrayView2<f64>,
    positives: &[Vec<bool>],
    weight_fn: &WeightFn,
) -> Result<ndarray::Array2<f64>> {
    let mut w = ndarray::Array2::<f64>::zeros(scores.dim());
    for b in 0..scores.nrows() {
        for p in 0..scores.ncols() {
            if !positives[b][p] {
                w[[b, p]] = weight_pdf(clamp_prob(scores[[b, p]]), weight_fn)?;
            }
        }
    }
    Ok(w)
}
