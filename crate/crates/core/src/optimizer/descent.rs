//! Inner minimizer: limited-memory BFGS on the logits with periodic
//! mirror-descent steps, both under a backtracking Armijo line search.
//!
//! The softmax pullback scales each logit gradient by its bin's mass, so
//! near-empty bins look stationary to a logit-space method even when moving
//! mass into them would lower the cost. The mirror step
//! `θ ← θ − t (∇_P C − ⟨P, ∇_P C⟩)` uses the mass-space gradient directly
//! and lets those bins recover. It is still a descent direction for the
//! logit cost, so every accepted step lowers the cost.

use std::collections::VecDeque;

use super::objective::{Evaluation, Objective, Penalty};
use super::TracePoint;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MEMORY: usize = 10;
/// Every this many iterations the step is a mirror step.
const MIRROR_EVERY: usize = 20;
/// Window for the relative-change stopping rule.
pub(crate) const STALL_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stop {
    Converged,
    /// No descent step could be found along either direction.
    Stalled,
    IterationBudget,
    EvaluationBudget,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Budget {
    pub iterations: usize,
    pub evaluations: usize,
}

pub(crate) struct Outcome {
    pub params: Vec<f64>,
    pub eval: Evaluation,
    pub stop: Stop,
}

struct Pairs {
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
}

impl Pairs {
    fn new() -> Self {
        Self { s: VecDeque::new(), y: VecDeque::new(), rho: VecDeque::new() }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-300) {
            return;
        }
        if self.s.len() == MEMORY {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.rho.push_back(1.0 / sy);
    }

    /// Two-loop recursion: `−H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let m = self.s.len();
        let mut alpha = vec![0.0; m];
        for k in (0..m).rev() {
            alpha[k] = self.rho[k] * dot(&self.s[k], &q);
            axpy(-alpha[k], &self.y[k], &mut q);
        }
        let gamma = match (self.s.back(), self.y.back()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / norm(g).max(1e-300),
        };
        for v in &mut q {
            *v *= gamma;
        }
        for (k, a) in alpha.iter().enumerate() {
            let beta = self.rho[k] * dot(&self.y[k], &q);
            axpy(a - beta, &self.s[k], &mut q);
        }
        for v in &mut q {
            *v = -*v;
        }
        q
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn mirror_direction(eval: &Evaluation) -> Vec<f64> {
    let centered: f64 = dot(&eval.mass, &eval.grad_mass);
    eval.grad_mass.iter().map(|g| -(g - centered)).collect()
}

/// Minimizes the penalized objective from `params`.
///
/// Accepted steps are appended to `trace`; `budget` is decremented in place.
pub(crate) fn minimize(
    objective: &mut Objective,
    penalty: &Penalty,
    params: Vec<f64>,
    rel_tol: f64,
    budget: &mut Budget,
    round: usize,
    trace: &mut Vec<TracePoint>,
) -> Outcome {
    let xi = objective.xi();
    let mut x = params;
    let mut eval = objective.evaluate_unchecked(&x, penalty);
    budget.evaluations = budget.evaluations.saturating_sub(1);

    let mut pairs = Pairs::new();
    let mut history: VecDeque<f64> = VecDeque::with_capacity(STALL_WINDOW + 1);
    history.push_back(eval.cost);
    let mut mirror_step = 1.0;
    let mut force_mirror = false;
    let mut iter = 0usize;

    let stop = loop {
        if budget.iterations == 0 {
            break Stop::IterationBudget;
        }
        if budget.evaluations == 0 {
            break Stop::EvaluationBudget;
        }

        let use_mirror = force_mirror || iter % MIRROR_EVERY == MIRROR_EVERY - 1;
        let (dir, mut t) = if use_mirror {
            (mirror_direction(&eval), mirror_step)
        } else {
            let mut d = pairs.direction(&eval.grad_params);
            if !(dot(&d, &eval.grad_params) < 0.0) {
                pairs.clear();
                d = pairs.direction(&eval.grad_params);
            }
            (d, 1.0)
        };
        let slope = dot(&dir, &eval.grad_params);

        let mut accepted = None;
        if slope < 0.0 {
            for _ in 0..MAX_BACKTRACKS {
                if budget.evaluations == 0 {
                    break;
                }
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let next = objective.evaluate_unchecked(&trial, penalty);
                budget.evaluations -= 1;
                if next.cost.is_finite() && next.cost <= eval.cost + ARMIJO * t * slope {
                    accepted = Some((trial, next));
                    break;
                }
                t *= 0.5;
            }
        }

        iter += 1;
        budget.iterations -= 1;

        let Some((trial, next)) = accepted else {
            if budget.evaluations == 0 {
                break Stop::EvaluationBudget;
            }
            if use_mirror {
                if force_mirror {
                    break Stop::Stalled;
                }
                mirror_step *= 1e-3;
            } else {
                pairs.clear();
                force_mirror = true;
            }
            continue;
        };

        if use_mirror {
            mirror_step = 2.0 * t;
        }
        force_mirror = false;
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad_params.iter().zip(&eval.grad_params).map(|(a, b)| a - b).collect();
        pairs.push(s, y);
        x = trial;
        eval = next;

        trace.push(TracePoint { iteration: trace.len(), cost: eval.cost, violation: eval.violation(xi), round });

        history.push_back(eval.cost);
        if history.len() > STALL_WINDOW {
            let old = history.pop_front().unwrap_or(eval.cost);
            if (old - eval.cost).abs() <= rel_tol * eval.cost.abs() {
                break Stop::Converged;
            }
        }
    };

    Outcome { params: x, eval, stop }
}
