//! Penalized mismatch objective over softmax logits.
//!
//! `P = softmax(θ)` keeps every mass strictly positive and summing to one, so
//! the only explicit constraint left is `index_variance(P) ≥ ξ`. It enters
//! through the augmented-Lagrangian term
//!
//! ```text
//! ψ(v) = (max(0, y + μ(ξ − v))² − y²) / (2μ)
//! ```
//!
//! with multiplier `y` and weight `μ`. With `y = 0` this is the plain
//! quadratic penalty `μ/2 · max(0, ξ − v)²`.

use crate::density::{index_variance, DivergenceKind};
use crate::error::{invalid, Result};
use crate::interpolant::{interpolant_mass, interpolant_pullback, MidpointWorkspace};

use super::SolverConfig;

/// Multiplier state of the variance constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    /// Quadratic weight `μ > 0`.
    pub weight: f64,
    /// Lagrange multiplier estimate `y ≥ 0`.
    pub multiplier: f64,
    /// Weight `τ` of the log-barrier `−(τ/n) Σ ln p_i − τ ln n` (zero at the
    /// uniform density).
    pub barrier: f64,
}

impl Default for Penalty {
    fn default() -> Self {
        Self { weight: 1.0, multiplier: 0.0, barrier: 0.0 }
    }
}

impl Penalty {
    fn value_and_slope(&self, xi: f64, v: f64) -> (f64, f64) {
        let active = (self.multiplier + self.weight * (xi - v)).max(0.0);
        let value = (active * active - self.multiplier * self.multiplier) / (2.0 * self.weight);
        (value, -active)
    }
}

/// One evaluation of the objective.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Penalized cost.
    pub cost: f64,
    /// Gradient with respect to the logits.
    pub grad_params: Vec<f64>,
    /// Gradient with respect to the masses (before the softmax pullback).
    pub grad_mass: Vec<f64>,
    /// `softmax(θ)`.
    pub mass: Vec<f64>,
    /// Unpenalized divergence term.
    pub divergence: f64,
    pub index_variance: f64,
}

impl Evaluation {
    pub fn violation(&self, xi: f64) -> f64 {
        (xi - self.index_variance).max(0.0)
    }
}

/// Evaluator for a fixed problem instance; owns scratch buffers.
#[derive(Debug, Clone)]
pub struct Objective {
    xi: f64,
    lambda: f64,
    kind: DivergenceKind,
    eps: f64,
    workspace: MidpointWorkspace,
    q: Vec<f64>,
    d_q: Vec<f64>,
    pulled: Vec<f64>,
}

impl Objective {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        Ok(Self {
            xi: cfg.xi,
            lambda: cfg.lambda,
            kind: cfg.kind,
            eps: cfg.eps,
            workspace: MidpointWorkspace::new(n),
            q: vec![0.0; n],
            d_q: vec![0.0; n],
            pulled: vec![0.0; n],
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn evaluate(&mut self, params: &[f64], penalty: &Penalty) -> Result<Evaluation> {
        if params.len() != self.n() {
            return Err(invalid(format!("expected {} parameters, got {}", self.n(), params.len())));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(self.evaluate_unchecked(params, penalty))
    }

    pub(crate) fn evaluate_unchecked(&mut self, params: &[f64], penalty: &Penalty) -> Evaluation {
        let n = self.n();
        let mass = softmax(params);

        if self.lambda == 0.5 {
            self.workspace.midpoint(&mass, &mut self.q);
        } else {
            self.q = interpolant_mass(&mass, self.lambda);
        }

        let mut grad_mass = vec![0.0; n];
        let divergence = divergence_with_partials(self.kind, &mass, &self.q, self.eps, &mut grad_mass, &mut self.d_q);

        if self.lambda == 0.5 {
            self.workspace.pullback(&mass, &self.d_q, &mut self.pulled);
        } else {
            interpolant_pullback(&mass, &self.d_q, self.lambda, &mut self.pulled);
        }
        for (g, p) in grad_mass.iter_mut().zip(&self.pulled) {
            *g += p;
        }

        let v = index_variance(&mass);
        let (pen, slope) = penalty.value_and_slope(self.xi, v);
        if slope != 0.0 {
            let mean: f64 = mass.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
            let nf = n as f64;
            for (k, g) in grad_mass.iter_mut().enumerate() {
                let idx = (k + 1) as f64;
                *g += slope * (idx * idx - 2.0 * mean * idx) / nf;
            }
        }

        let mut barrier = 0.0;
        if penalty.barrier > 0.0 {
            let nf = n as f64;
            let tau = penalty.barrier;
            barrier = -tau * (mass.iter().map(|p| ln_pos(*p)).sum::<f64>() / nf + nf.ln());
            for (g, p) in grad_mass.iter_mut().zip(&mass) {
                *g -= tau / (nf * p.max(f64::MIN_POSITIVE));
            }
        }

        let centered: f64 = mass.iter().zip(&grad_mass).map(|(p, g)| p * g).sum();
        let grad_params = mass.iter().zip(&grad_mass).map(|(p, g)| p * (g - centered)).collect();

        Evaluation { cost: divergence + pen + barrier, grad_params, grad_mass, mass, divergence, index_variance: v }
    }
}

/// Penalized cost and its logit gradient at `params`, with the default
/// penalty state (`μ = 1`, no multiplier).
pub fn objective_and_gradient(params: &[f64], cfg: &SolverConfig) -> Result<(f64, Vec<f64>)> {
    let mut obj = Objective::new(cfg)?;
    let eval = obj.evaluate(params, &Penalty::default())?;
    Ok((eval.cost, eval.grad_params))
}

/// Numerically stable softmax.
pub fn softmax(params: &[f64]) -> Vec<f64> {
    let top = params.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = params.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

#[inline]
fn ln_pos(x: f64) -> f64 {
    x.max(f64::MIN_POSITIVE).ln()
}

/// `KL(x‖max(y, eps))` and its partials, accumulated into `dx` / `dy`.
fn kl_partials(x: &[f64], y: &[f64], eps: f64, dx: &mut [f64], dy: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..x.len() {
        let yf = y[k].max(eps);
        if x[k] > 0.0 {
            total += x[k] * (x[k].ln() - yf.ln());
        }
        dx[k] += ln_pos(x[k]) + 1.0 - yf.ln();
        if y[k] > eps {
            dy[k] -= x[k] / y[k];
        }
    }
    total
}

/// Divergence between `p` and `q` plus `∂/∂p` (into `dp`) and `∂/∂q` (into `dq`).
fn divergence_with_partials(
    kind: DivergenceKind,
    p: &[f64],
    q: &[f64],
    eps: f64,
    dp: &mut [f64],
    dq: &mut [f64],
) -> f64 {
    dp.fill(0.0);
    dq.fill(0.0);
    match kind {
        DivergenceKind::KlPq => kl_partials(p, q, eps, dp, dq),
        DivergenceKind::KlQp => kl_partials(q, p, eps, dq, dp),
        DivergenceKind::JeffreysMid => {
            let n = p.len();
            let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            let mut d_mid = vec![0.0; n];
            let total = kl_partials(p, &mid, eps, dp, &mut d_mid) + kl_partials(q, &mid, eps, dq, &mut d_mid);
            for k in 0..n {
                dp[k] += 0.5 * d_mid[k];
                dq[k] += 0.5 * d_mid[k];
            }
            total
        }
        DivergenceKind::L2 => {
            let mut total = 0.0;
            for k in 0..p.len() {
                let diff = p[k] - q[k];
                total += diff * diff;
                dp[k] = 2.0 * diff;
                dq[k] = -2.0 * diff;
            }
            total
        }
    }
}
