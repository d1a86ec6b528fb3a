//! Mismatch measurements: 1-D prior-vs-midpoint tables, norm-distribution
//! overlap in `d` dimensions, and the chi-squared laws of Gaussian norms.

use rayon::prelude::*;

use crate::density::{kl_raw, BinnedDensity, DEFAULT_KL_FLOOR};
use crate::error::{invalid, Result};
use crate::interpolant::midpoint_mass;
use crate::rng::mix_seed;
use crate::sampler::{interpolate, sample, PriorSpec};

/// Default bin count of norm histograms.
pub const DEFAULT_BINS: usize = 200;

/// Equal-width histogram normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    /// `bins` equal-width bins over `[lo, hi]`; the top edge is inclusive.
    /// Values outside the range are an error.
    pub fn from_values(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("histogram needs at least one bin"));
        }
        if values.is_empty() {
            return Err(invalid("histogram of an empty sample"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("histogram range [{lo}, {hi}] is not a finite interval")));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            if !(lo..=hi).contains(&v) {
                return Err(invalid(format!("value {v} outside histogram range [{lo}, {hi}]")));
            }
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        let total = values.len() as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
        let mass = counts.into_iter().map(|c| c as f64 / total).collect();
        Ok(Self { edges, mass })
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Range covering every value of both samples. A degenerate range is widened
/// so that the histogram stays well defined.
fn pooled_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (lo, hi) = a.iter().chain(b).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    }
}

/// `KL(P ‖ midpoint(P))` for each named density.
pub fn mismatch_table(densities: &[(String, BinnedDensity)]) -> Vec<(String, f64)> {
    densities
        .par_iter()
        .map(|(name, d)| {
            let mid = midpoint_mass(d.mass());
            (name.clone(), kl_raw(d.mass(), &mid, DEFAULT_KL_FLOOR))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormOverlapReport {
    pub d: usize,
    pub prior_hist: Histogram,
    pub mid_hist: Histogram,
    /// `KL(prior ‖ midpoint)` of the two norm histograms, in nats.
    pub kl_prior_vs_mid: f64,
    /// `Σ min(p_i, q_i)`.
    pub overlap: f64,
}

/// Compares the norm distribution of `prior` samples with that of midpoints
/// of two further independent batches.
///
/// The three batches use streams 0, 1, 2 of `seed`.
pub fn norm_overlap(prior: &PriorSpec, d: usize, count: usize, bins: usize, seed: u64) -> Result<NormOverlapReport> {
    if count < 1000 {
        return Err(invalid(format!("norm overlap needs at least 1000 samples, got {count}")));
    }
    let z = sample(prior, d, count, mix_seed(seed, 0))?;
    let a = sample(prior, d, count, mix_seed(seed, 1))?;
    let b = sample(prior, d, count, mix_seed(seed, 2))?;
    let mid = interpolate(&a, &b, 0.5)?;

    let prior_norms = z.norms();
    let mid_norms = mid.norms();
    let (lo, hi) = pooled_range(&prior_norms, &mid_norms);
    let prior_hist = Histogram::from_values(&prior_norms, lo, hi, bins)?;
    let mid_hist = Histogram::from_values(&mid_norms, lo, hi, bins)?;
    let kl_prior_vs_mid = kl_raw(&prior_hist.mass, &mid_hist.mass, DEFAULT_KL_FLOOR).max(0.0);
    let overlap = prior_hist.mass.iter().zip(&mid_hist.mass).map(|(p, q)| p.min(*q)).sum::<f64>().min(1.0);
    Ok(NormOverlapReport { d, prior_hist, mid_hist, kl_prior_vs_mid, overlap })
}

/// Seed of one `(prior, d)` cell of a report grid.
pub fn cell_seed(seed: u64, prior: &PriorSpec, d: usize) -> u64 {
    let tag = prior.tag().bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    mix_seed(mix_seed(seed, tag), d as u64)
}

/// [`norm_overlap`] for each dimension in `dims`, cells seeded by [`cell_seed`].
pub fn norm_overlap_grid(
    prior: &PriorSpec,
    dims: &[usize],
    count: usize,
    bins: usize,
    seed: u64,
) -> Result<Vec<NormOverlapReport>> {
    dims.par_iter().map(|&d| norm_overlap(prior, d, count, bins, cell_seed(seed, prior, d))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Check {
    /// Mean of `‖z‖²` over `dσ²`.
    pub mean_ratio: f64,
    /// Variance of `‖z‖²` over `2dσ⁴`.
    pub var_ratio: f64,
    /// Mean of the midpoint `‖z′‖²` over `dσ²/2`.
    pub mid_mean_ratio: f64,
}

/// Empirical check of `‖z‖² ~ σ²χ²(d)` and `‖z′‖² ~ (σ²/2)χ²(d)` for a normal prior.
pub fn chi2_check(d: usize, sigma: f64, count: usize, seed: u64) -> Result<Chi2Check> {
    if count < 2 {
        return Err(invalid("chi-squared check needs at least two samples"));
    }
    let prior = PriorSpec::Normal { mu: 0.0, sigma };
    let z = sample(&prior, d, count, mix_seed(seed, 0))?;
    let a = sample(&prior, d, count, mix_seed(seed, 1))?;
    let b = sample(&prior, d, count, mix_seed(seed, 2))?;
    let mid = interpolate(&a, &b, 0.5)?;

    let sq = z.squared_norms();
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let mid_mean = mid.squared_norms().iter().sum::<f64>() / n;
    let s2 = sigma * sigma;
    let d = d as f64;
    Ok(Chi2Check {
        mean_ratio: mean / (d * s2),
        var_ratio: var / (2.0 * d * s2 * s2),
        mid_mean_ratio: mid_mean / (d * s2 / 2.0),
    })
}

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Density of the chi-squared distribution with `d` degrees of freedom.
pub fn chi2_pdf(x: f64, d: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid(format!("chi-squared pdf needs x ≥ 0, got {x}")));
    }
    if d == 0 {
        return Err(invalid("chi-squared needs at least one degree of freedom"));
    }
    let k = d as f64 / 2.0;
    if x == 0.0 {
        return Ok(match d {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        });
    }
    Ok(((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_truncated_normal, make_uniform, GridSpec};

    #[test]
    fn histogram_conserves_counts() {
        let values = [0.0, 0.1, 0.5, 0.99, 1.0, 1.0];
        let h = Histogram::from_values(&values, 0.0, 1.0, 4).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let counts: Vec<f64> = h.mass.iter().map(|m| m * 6.0).collect();
        assert_eq!(counts, vec![2.0, 0.0, 1.0, 3.0]);
        assert!(Histogram::from_values(&[2.0], 0.0, 1.0, 4).is_err());
    }

    #[test]
    fn degenerate_range_is_widened() {
        let (lo, hi) = pooled_range(&[3.0, 3.0], &[3.0]);
        assert!(lo < 3.0 && hi > 3.0);
    }

    #[test]
    fn table_ordering() {
        let grid = GridSpec::unit(1024).unwrap();
        let rows = mismatch_table(&[
            ("uniform".into(), make_uniform(grid)),
            ("normal".into(), make_truncated_normal(grid, 0.5, 0.1).unwrap()),
        ]);
        assert_eq!(rows[0].0, "uniform");
        assert!((rows[0].1 - (1.0 - std::f64::consts::LN_2)).abs() <= 3e-3);
        assert!((rows[1].1 - (1.0 - std::f64::consts::LN_2) / 2.0).abs() <= 5e-3);
        assert!(rows[0].1 > rows[1].1);
    }

    #[test]
    fn normal_overlap_shrinks_with_dimension() {
        let prior = PriorSpec::Normal { mu: 0.0, sigma: 1.0 };
        let low = norm_overlap(&prior, 5, 50_000, DEFAULT_BINS, 1).unwrap();
        let high = norm_overlap(&prior, 200, 50_000, DEFAULT_BINS, 1).unwrap();
        assert!(low.overlap >= 0.5, "{}", low.overlap);
        assert!(high.overlap <= 0.05, "{}", high.overlap);
        assert!(high.kl_prior_vs_mid > low.kl_prior_vs_mid);
        assert!((low.prior_hist.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!((low.mid_hist.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn overlap_is_stable_across_seeds() {
        let prior = PriorSpec::Uniform { min: 0.0, max: 1.0 };
        let overlaps: Vec<f64> =
            (0..3).map(|s| norm_overlap(&prior, 10, 50_000, DEFAULT_BINS, s).unwrap().overlap).collect();
        let spread =
            overlaps.iter().cloned().fold(f64::MIN, f64::max) - overlaps.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 0.02, "{overlaps:?}");
    }

    #[test]
    fn grid_is_scheduler_independent() {
        let prior = PriorSpec::Normal { mu: 0.0, sigma: 1.0 };
        let grid = norm_overlap_grid(&prior, &[3, 7], 2000, 50, 4).unwrap();
        let single = norm_overlap(&prior, 7, 2000, 50, cell_seed(4, &prior, 7)).unwrap();
        assert_eq!(grid[1], single);
    }

    #[test]
    fn chi2_laws_hold_for_normal_norms() {
        let c = chi2_check(100, 1.0, 50_000, 3).unwrap();
        assert!((c.mean_ratio - 1.0).abs() <= 0.01, "{c:?}");
        assert!((c.var_ratio - 1.0).abs() <= 0.05, "{c:?}");
        assert!((c.mid_mean_ratio - 1.0).abs() <= 0.01, "{c:?}");
    }

    #[test]
    fn ln_gamma_known_values() {
        let cases = [
            (0.5, 0.5 * std::f64::consts::PI.ln()),
            (1.0, 0.0),
            (2.0, 0.0),
            (5.0, 24f64.ln()),
            (10.5, 13.940_625_219_403_763),
            (100.0, 359.134_205_369_575_4),
        ];
        for (x, want) in cases {
            let got = ln_gamma(x);
            let err = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
            assert!(err <= 1e-10, "ln_gamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn chi2_pdf_values() {
        assert!((chi2_pdf(0.0, 2).unwrap() - 0.5).abs() <= 1e-15);
        for x in [0.3, 1.0, 4.0] {
            assert!((chi2_pdf(x, 2).unwrap() - (-x / 2.0f64).exp() / 2.0).abs() <= 1e-12);
        }
        assert!((chi2_pdf(2.0, 4).unwrap() - 2.0 * (-1.0f64).exp() / 4.0).abs() <= 1e-12);
        assert!(chi2_pdf(-1.0, 3).is_err());
    }

    #[test]
    fn chi2_pdf_integrates_to_one() {
        // For d ≥ 4 the mass beyond 10d is below 1e-7; d = 2 is checked
        // against its exact integral 1 − e^{−10}.
        for (d, want) in [(2usize, 1.0 - (-10.0f64).exp()), (4, 1.0), (5, 1.0), (10, 1.0), (50, 1.0)] {
            let upper = 10.0 * d as f64;
            let steps = 200_000;
            let h = upper / steps as f64;
            let mut total = 0.0;
            for k in 0..=steps {
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                total += w * chi2_pdf(k as f64 * h, d).unwrap();
            }
            total *= h;
            assert!((total - want).abs() <= 1e-6, "d = {d}: {total}");
        }
    }
}
