//! Search for a binned prior whose interpolant distribution matches itself.
//!
//! Minimizes `D(P ‖ Q_λ(P))` over densities on `n` bins of `[0, 1]` subject
//! to `index_variance(P) ≥ ξ`. Without the variance bound the minimizer is a
//! single-bin delta. The simplex is built in through a softmax of free
//! logits; the variance bound is handled by an augmented Lagrangian whose
//! weight grows ×10 whenever a round fails to halve the violation.
//!
//! The early rounds also carry a vanishing log-barrier on the masses, much as
//! an interior-point method would. Without it, concentrated starts settle
//! into a degenerate family: two adjacent equal bins are an exact fixed point
//! of the binned midpoint map, so a two-bin spike plus a sprinkle of far
//! outliers (which buy the variance) is a cheap local minimum. The barrier
//! spreads the early iterates so those starts reach the same main-lobe
//! solution as the uniform one. Starts pinned at the very edge of the domain
//! can still end in the spike family.

mod descent;
mod objective;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{divergence_raw, index_variance, BinnedDensity, DivergenceKind, GridSpec, DEFAULT_KL_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::interpolant::midpoint_mass;
use crate::rng::stream_rng;

pub use objective::{objective_and_gradient, softmax, Evaluation, Objective, Penalty};

use descent::{Budget, Stop};

/// Logit noise added to perturbed starts.
const INIT_NOISE: f64 = 0.01;
/// Accepted constraint slack at the end of an outer round.
const FEASIBILITY_TOL: f64 = 1e-7;
const MAX_ROUNDS: usize = 60;
const WEIGHT_GROWTH: f64 = 10.0;
/// Log-barrier continuation: starts at `BARRIER_START`, shrinks by
/// `BARRIER_DECAY` per outer round and is dropped once below `BARRIER_END`.
const BARRIER_START: f64 = 1e-2;
const BARRIER_DECAY: f64 = 0.1;
const BARRIER_END: f64 = 1e-9;
/// Delta starts put this fraction of the mass in the chosen bin.
const DELTA_INIT_MASS: f64 = 0.99;

/// Starting point of a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Init {
    Uniform,
    #[default]
    PerturbedUniform,
    /// Normal logits with center `mu` and width `sigma` on `[0, 1]`.
    TruncNormal {
        mu: f64,
        sigma: f64,
    },
    /// Nearly all mass in one bin (0-based).
    DeltaAt {
        bin: usize,
    },
}

impl std::str::FromStr for Init {
    type Err = Error;

    /// `uniform`, `perturbed`, `normal[:mu,sigma]`, `delta:bin`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, args) = s.split_once(':').map_or((s, None), |(h, a)| (h, Some(a)));
        let nums = |a: &str| -> Result<Vec<f64>> {
            a.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| invalid(format!("bad number '{x}' in init '{s}'"))))
                .collect()
        };
        match (head.to_ascii_lowercase().as_str(), args) {
            ("uniform", None) => Ok(Init::Uniform),
            ("perturbed" | "perturbed_uniform", None) => Ok(Init::PerturbedUniform),
            ("normal" | "trunc_normal", None) => Ok(Init::TruncNormal { mu: 0.5, sigma: 0.1 }),
            ("normal" | "trunc_normal", Some(a)) => match nums(a)?.as_slice() {
                [mu, sigma] => Ok(Init::TruncNormal { mu: *mu, sigma: *sigma }),
                _ => Err(invalid(format!("init '{s}' expects normal:mu,sigma"))),
            },
            ("delta", Some(a)) => a
                .trim()
                .parse::<usize>()
                .map(|bin| Init::DeltaAt { bin })
                .map_err(|_| invalid(format!("init '{s}' expects delta:bin"))),
            _ => Err(invalid(format!("unknown init '{s}' (uniform, perturbed, normal:mu,sigma, delta:bin)"))),
        }
    }
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Init::Uniform => write!(f, "uniform"),
            Init::PerturbedUniform => write!(f, "perturbed"),
            Init::TruncNormal { mu, sigma } => write!(f, "normal:{mu},{sigma}"),
            Init::DeltaAt { bin } => write!(f, "delta:{bin}"),
        }
    }
}

/// Problem instance and solver budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n: usize,
    pub xi: f64,
    pub lambda: f64,
    pub kind: DivergenceKind,
    pub max_iters: usize,
    pub max_fun_evals: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub init: Init,
    pub seed: u64,
    pub eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            xi: 0.75,
            lambda: 0.5,
            kind: DivergenceKind::KlPq,
            max_iters: 100_000,
            max_fun_evals: 400_000,
            rel_tol: 1e-9,
            restarts: 3,
            init: Init::PerturbedUniform,
            seed: 0,
            eps: DEFAULT_KL_FLOOR,
        }
    }
}

/// Largest index variance any density on `n` bins can reach (half the mass
/// on each end bin).
pub fn max_index_variance(n: usize) -> f64 {
    let nf = n as f64;
    (nf - 1.0) * (nf - 1.0) / (4.0 * nf)
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(invalid(format!("xi must be a finite non-negative number, got {}", self.xi)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if self.max_iters == 0 || self.max_fun_evals == 0 {
            return Err(invalid("iteration and evaluation budgets must be positive"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        match self.init {
            Init::DeltaAt { bin } if bin >= self.n => {
                return Err(invalid(format!("delta init bin {bin} outside {} bins", self.n)))
            }
            Init::TruncNormal { mu, sigma } if !(sigma > 0.0) || !mu.is_finite() => {
                return Err(invalid(format!("normal init needs finite mu and sigma > 0, got {mu}, {sigma}")))
            }
            _ => {}
        }
        let max = max_index_variance(self.n);
        if self.xi > max {
            return Err(Error::InfeasibleConstraint { xi: self.xi, max });
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::unit(self.n).expect("validated n")
    }
}

/// One accepted step of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Penalized cost in nats.
    pub cost: f64,
    /// `max(0, ξ − index_variance)`.
    pub violation: f64,
    /// Outer (multiplier) round the step belongs to.
    pub round: usize,
}

/// Outcome of a single restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub seed: u64,
    pub kl_to_midpoint: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub density: BinnedDensity,
    /// Trace of the winning restart.
    pub trace: Vec<TracePoint>,
    pub converged: bool,
    /// `KL(P ‖ midpoint(P))` of the returned density.
    pub final_kl_to_midpoint: f64,
    pub restarts_run: usize,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.restarts[self.best_restart].iterations
    }
}

fn initial_logits(cfg: &SolverConfig, restart: usize, seed: u64) -> Vec<f64> {
    let n = cfg.n;
    let grid = cfg.grid();
    let mut logits = match cfg.init {
        Init::Uniform | Init::PerturbedUniform => vec![0.0; n],
        Init::TruncNormal { mu, sigma } => grid
            .centers()
            .into_iter()
            .map(|c| {
                let z = (c - mu) / sigma;
                -0.5 * z * z
            })
            .collect(),
        Init::DeltaAt { bin } => {
            let mut l = vec![0.0; n];
            l[bin] = (DELTA_INIT_MASS / (1.0 - DELTA_INIT_MASS) * (n - 1) as f64).ln();
            l
        }
    };
    if matches!(cfg.init, Init::PerturbedUniform) || restart > 0 {
        let mut rng = stream_rng(seed, 0);
        for l in &mut logits {
            let z: f64 = StandardNormal.sample(&mut rng);
            *l += INIT_NOISE * z;
        }
    }
    logits
}

/// Mixes in the smallest amount of a wide reference density that lifts the
/// index variance to `xi`.
fn restore_feasibility(mass: &mut [f64], xi: f64) {
    if index_variance(mass) >= xi {
        return;
    }
    let n = mass.len();
    let uniform_iv = ((n * n - 1) as f64 / 12.0) / n as f64;
    let reference: Vec<f64> = if uniform_iv >= xi {
        vec![1.0 / n as f64; n]
    } else {
        let mut r = vec![0.0; n];
        r[0] = 0.5;
        r[n - 1] = 0.5;
        r
    };
    let mix = |a: f64| -> Vec<f64> { mass.iter().zip(&reference).map(|(p, r)| (1.0 - a) * p + a * r).collect() };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if index_variance(&mix(mid)) >= xi {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mixed = mix(hi);
    let total: f64 = mixed.iter().sum();
    for (m, v) in mass.iter_mut().zip(mixed) {
        *m = v / total;
    }
}

struct RestartResult {
    mass: Vec<f64>,
    trace: Vec<TracePoint>,
    summary: RestartSummary,
}

fn run_restart(cfg: &SolverConfig, restart: usize) -> RestartResult {
    let seed = crate::rng::mix_seed(cfg.seed, restart as u64);
    let mut objective = Objective::new(cfg).expect("validated config");
    let mut params = initial_logits(cfg, restart, seed);
    let mut penalty = Penalty { barrier: BARRIER_START, ..Penalty::default() };
    let mut budget = Budget { iterations: cfg.max_iters, evaluations: cfg.max_fun_evals };
    let mut trace = Vec::new();
    let mut previous_violation: Option<f64> = None;
    let mut converged = false;
    let mut mass = softmax(&params);

    for round in 0..MAX_ROUNDS {
        let outcome = descent::minimize(&mut objective, &penalty, params, cfg.rel_tol, &mut budget, round, &mut trace);
        params = outcome.params;
        mass = outcome.eval.mass;
        let slack = outcome.eval.index_variance - cfg.xi;
        let violation = (-slack).max(0.0);

        if matches!(outcome.stop, Stop::IterationBudget | Stop::EvaluationBudget) {
            break;
        }

        let next_multiplier = (penalty.multiplier - penalty.weight * slack).max(0.0);
        let satisfied = if next_multiplier == 0.0 { slack >= -FEASIBILITY_TOL } else { slack.abs() <= FEASIBILITY_TOL };
        if satisfied && penalty.barrier == 0.0 {
            converged = true;
            break;
        }
        penalty.barrier = if penalty.barrier > BARRIER_END { penalty.barrier * BARRIER_DECAY } else { 0.0 };
        penalty.multiplier = next_multiplier;
        if previous_violation.is_some_and(|prev| violation > 0.5 * prev) {
            penalty.weight *= WEIGHT_GROWTH;
        }
        previous_violation = Some(violation);
    }

    restore_feasibility(&mut mass, cfg.xi);
    let mid = midpoint_mass(&mass);
    let kl = divergence_raw(DivergenceKind::KlPq, &mass, &mid, cfg.eps);
    RestartResult {
        mass,
        summary: RestartSummary {
            seed,
            kl_to_midpoint: kl,
            converged,
            iterations: cfg.max_iters - budget.iterations,
            evaluations: cfg.max_fun_evals - budget.evaluations,
        },
        trace,
    }
}

/// Solves for the prior, keeping the best of `cfg.restarts` independent runs.
pub fn solve_prior(cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let results: Vec<RestartResult> = (0..cfg.restarts).into_par_iter().map(|r| run_restart(cfg, r)).collect();

    let best = results
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.summary.kl_to_midpoint.total_cmp(&b.summary.kl_to_midpoint))
        .map(|(i, _)| i)
        .expect("at least one restart");

    let restarts: Vec<RestartSummary> = results.iter().map(|r| r.summary.clone()).collect();
    let mut results = results;
    let winner = results.swap_remove(best);
    let density = BinnedDensity::new(cfg.grid(), winner.mass)?;
    Ok(SolveReport {
        density,
        trace: winner.trace,
        converged: winner.summary.converged,
        final_kl_to_midpoint: winner.summary.kl_to_midpoint,
        restarts_run: cfg.restarts,
        best_restart: best,
        restarts,
    })
}

/// Qualitative shape traits of a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    /// `½ Σ |p_i − p_{n+1−i}|`
    pub symmetry_deviation: f64,
    /// Local maxima of the 9-bin boxcar-smoothed masses (plateaus count once).
    pub lobe_count: usize,
    /// Mass in the outer 5% of bins on both sides.
    pub tail_mass: f64,
}

const SMOOTHING_WIDTH: usize = 9;

pub fn shape_report(d: &BinnedDensity) -> ShapeReport {
    let p = d.mass();
    let n = p.len();
    let symmetry_deviation = 0.5 * (0..n).map(|i| (p[i] - p[n - 1 - i]).abs()).sum::<f64>();

    let half = SMOOTHING_WIDTH / 2;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            p[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let lobe_count = count_maxima(&smooth);

    let k = ((0.05 * n as f64).floor() as usize).max(1).min(n / 2);
    let tail_mass = p[..k].iter().sum::<f64>() + p[n - k..].iter().sum::<f64>();

    ShapeReport { symmetry_deviation, lobe_count, tail_mass }
}

/// Counts runs of equal values strictly above both neighbours (edges count as lower).
fn count_maxima(v: &[f64]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let left_lower = i == 0 || v[i - 1] < v[i];
        let right_lower = j + 1 == v.len() || v[j + 1] < v[i];
        if left_lower && right_lower {
            count += 1;
        }
        i = j + 1;
    }
    count
}
