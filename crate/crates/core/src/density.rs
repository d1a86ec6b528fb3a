//! Binned densities on a uniform grid.
//!
//! A [`BinnedDensity`] is a probability mass vector over `n` equal-width bins
//! covering `[min, max)`. Bin `i` (0-based) spans `[min + i*h, min + (i+1)*h)`
//! and is represented by its center `min + (i + 0.5)*h`. Everything downstream
//! (interpolant operators, the optimizer, the sampler) works on masses, never
//! on pdf values, so convolution and rebinning conserve mass exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on `Σ mass = 1`.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Default floor applied to the denominator distribution of KL terms.
pub const DEFAULT_KL_FLOOR: f64 = 1e-12;

/// A uniform grid of `n` bins over `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    min: f64,
    max: f64,
    n: usize,
}

impl GridSpec {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || min >= max {
            return Err(invalid(format!("grid needs finite min < max, got [{min}, {max}]")));
        }
        if n < 2 {
            return Err(invalid(format!("grid needs at least 2 bins, got {n}")));
        }
        Ok(Self { min, max, n })
    }

    /// The `[0, 1]` grid with `n` bins.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n)
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Bin width `h`.
    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.width()
    }

    /// Lower edge of bin `i`; `edge(n)` is the upper end of the domain.
    pub fn edge(&self, i: usize) -> f64 {
        if i == self.n {
            self.max
        } else {
            self.min + i as f64 * self.width()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    /// Index of the bin containing `x`, or `None` outside `[min, max)`.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.min && x < self.max) {
            return None;
        }
        let i = ((x - self.min) / self.width()).floor() as usize;
        Some(i.min(self.n - 1))
    }
}

/// Which divergence to evaluate between two binned densities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// `KL(P‖Q)`
    #[default]
    KlPq,
    /// `KL(Q‖P)`
    KlQp,
    /// `KL(P‖M) + KL(Q‖M)` with `M = (P + Q)/2`.
    JeffreysMid,
    /// Squared Euclidean distance between mass vectors.
    L2,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 4] =
        [DivergenceKind::KlPq, DivergenceKind::KlQp, DivergenceKind::JeffreysMid, DivergenceKind::L2];

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceKind::KlPq => "kl_pq",
            DivergenceKind::KlQp => "kl_qp",
            DivergenceKind::JeffreysMid => "jeffreys_mid",
            DivergenceKind::L2 => "l2",
        }
    }
}

impl std::str::FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s.trim())).ok_or_else(|| {
            invalid(format!("unknown divergence '{s}' (expected one of kl_pq, kl_qp, jeffreys_mid, l2)"))
        })
    }
}

impl std::fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Probability mass per bin of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDensity {
    grid: GridSpec,
    mass: Vec<f64>,
}

impl BinnedDensity {
    /// Wraps an already-normalized mass vector, checking every invariant.
    pub fn new(grid: GridSpec, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.n() {
            return Err(Error::InvalidDensity(format!(
                "mass has {} entries but the grid has {} bins",
                mass.len(),
                grid.n()
            )));
        }
        if let Some((i, m)) = mass.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidDensity(format!("mass[{i}] = {m} is not a finite non-negative number")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDensity(format!("mass sums to {total}, expected 1")));
        }
        Ok(Self { grid, mass })
    }

    /// Normalizes non-negative weights into a density.
    pub fn from_weights(grid: GridSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.n() {
            return Err(Error::InvalidDensity(format!("{} weights for a grid of {} bins", weights.len(), grid.n())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDensity("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDensity("weights sum to zero".into()));
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { grid, mass })
    }

    /// Builds a density from unnormalized log-weights (stable for very peaked inputs).
    pub(crate) fn from_log_weights(grid: GridSpec, logw: &[f64]) -> Result<Self> {
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(invalid("log-weights have no finite maximum"));
        }
        Self::from_weights(grid, logw.iter().map(|l| (l - top).exp()).collect())
    }

    pub(crate) fn from_raw(grid: GridSpec, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.n());
        Self { grid, mass }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// `Σ p_i c_i`
    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(i, p)| p * self.grid.center(i)).sum()
    }

    /// `Σ p_i c_i² − mean²`, in physical units squared.
    ///
    /// Computed about the mean to avoid cancellation; clamped at zero.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let v: f64 = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dx = self.grid.center(i) - mean;
                p * dx * dx
            })
            .sum();
        v.max(0.0)
    }

    /// The minimum-variance constraint term `(1/n)(Σ i² p_i − (Σ i p_i)²)`
    /// with 1-based bin indices `i = 1..n`.
    pub fn index_variance(&self) -> f64 {
        index_variance(&self.mass)
    }

    /// Largest single-bin mass.
    pub fn max_mass(&self) -> f64 {
        self.mass.iter().copied().fold(0.0, f64::max)
    }
}

/// Index variance of a raw mass vector (see [`BinnedDensity::index_variance`]).
pub(crate) fn index_variance(mass: &[f64]) -> f64 {
    let n = mass.len() as f64;
    let mean: f64 = mass.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let second: f64 = mass
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = (i + 1) as f64 - mean;
            p * d * d
        })
        .sum();
    second / n
}

/// `mass_i = 1/n`.
pub fn make_uniform(grid: GridSpec) -> BinnedDensity {
    let n = grid.n();
    BinnedDensity::from_raw(grid, vec![1.0 / n as f64; n])
}

/// All mass in bin `bin`.
pub fn make_delta(grid: GridSpec, bin: usize) -> Result<BinnedDensity> {
    if bin >= grid.n() {
        return Err(invalid(format!("delta bin {bin} outside a grid of {} bins", grid.n())));
    }
    let mut mass = vec![0.0; grid.n()];
    mass[bin] = 1.0;
    Ok(BinnedDensity::from_raw(grid, mass))
}

/// Normal pdf at the bin centers, renormalized over the grid.
pub fn make_truncated_normal(grid: GridSpec, mu: f64, sigma: f64) -> Result<BinnedDensity> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("normal sigma must be positive, got {sigma}")));
    }
    if !mu.is_finite() {
        return Err(invalid(format!("normal mu must be finite, got {mu}")));
    }
    let logw: Vec<f64> = grid
        .centers()
        .into_iter()
        .map(|c| {
            let z = (c - mu) / sigma;
            -0.5 * z * z
        })
        .collect();
    BinnedDensity::from_log_weights(grid, &logw)
}

/// Cauchy pdf at the bin centers, renormalized over the grid.
pub fn make_truncated_cauchy(grid: GridSpec, x0: f64, gamma_scale: f64) -> Result<BinnedDensity> {
    if !(gamma_scale > 0.0) || !gamma_scale.is_finite() {
        return Err(invalid(format!("cauchy scale must be positive, got {gamma_scale}")));
    }
    if !x0.is_finite() {
        return Err(invalid(format!("cauchy location must be finite, got {x0}")));
    }
    let weights = grid
        .centers()
        .into_iter()
        .map(|c| {
            let z = (c - x0) / gamma_scale;
            1.0 / (1.0 + z * z)
        })
        .collect();
    BinnedDensity::from_weights(grid, weights)
}

/// `Σ x_i ln(x_i / max(y_i, eps))` with `0 ln 0 = 0`.
pub(crate) fn kl_raw(x: &[f64], y: &[f64], eps: f64) -> f64 {
    x.iter().zip(y).filter(|(xi, _)| **xi > 0.0).map(|(xi, yi)| xi * (xi.ln() - yi.max(eps).ln())).sum()
}

/// Evaluates `kind` between `p` and `q` (in nats for the KL family).
///
/// `eps` floors the denominator distribution of every KL term.
pub fn divergence(kind: DivergenceKind, p: &BinnedDensity, q: &BinnedDensity, eps: f64) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::IncompatibleGrids(format!("{:?} vs {:?}", p.grid, q.grid)));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("KL floor must be positive, got {eps}")));
    }
    Ok(divergence_raw(kind, &p.mass, &q.mass, eps))
}

pub(crate) fn divergence_raw(kind: DivergenceKind, p: &[f64], q: &[f64], eps: f64) -> f64 {
    match kind {
        DivergenceKind::KlPq => kl_raw(p, q, eps),
        DivergenceKind::KlQp => kl_raw(q, p, eps),
        DivergenceKind::JeffreysMid => {
            let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            kl_raw(p, &m, eps) + kl_raw(q, &m, eps)
        }
        DivergenceKind::L2 => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn density(n: usize) -> impl Strategy<Value = BinnedDensity> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("all-zero weights", move |w| {
            BinnedDensity::from_weights(GridSpec::unit(n).unwrap(), w).ok()
        })
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(p in density(32), q in density(32)) {
            let kl = divergence(DivergenceKind::KlPq, &p, &q, DEFAULT_KL_FLOOR).unwrap();
            prop_assert!(kl >= -1e-9);
        }

        #[test]
        fn variance_units_agree(p in density(20)) {
            let h = p.grid().width();
            let n = p.n() as f64;
            let from_index = p.index_variance() * h * h * n;
            let v = p.variance();
            prop_assert!((from_index - v).abs() <= 1e-9 * v.max(1e-12));
        }

        #[test]
        fn variance_nonnegative(p in density(16)) {
            prop_assert!(p.variance() >= 0.0);
        }
    }
}
