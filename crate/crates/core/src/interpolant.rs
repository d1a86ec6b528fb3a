//! Distribution of the interpolant `(1−λ)x₁ + λx₂` for i.i.d. `x₁, x₂`.
//!
//! The continuous operator is a scaled self-convolution. On a bin-centered
//! grid the centers are affine in the bin index, so the interpolant of bins
//! `i` and `j` sits at fractional index `t = (1−λ)i + λj`. Each pair's mass
//! `p_i p_j` is split linearly between the two bins bracketing `t`. This is
//! conservative, keeps the mean exact and adds at most `h²/4` of variance.
//!
//! At `λ = ½` the position only depends on `s = i + j`: even sums land on the
//! center of bin `s/2`, odd sums on the edge between two bins (split 50/50).
//! [`midpoint_density`] uses that to reduce the work to one self-convolution.

use rayon::prelude::*;

use crate::density::{divergence_raw, BinnedDensity, DivergenceKind, DEFAULT_KL_FLOOR};
use crate::error::{invalid, Result};

/// Rows of the pair loop handled per parallel task.
const PAIR_CHUNK: usize = 64;

/// Divergence between a density and its interpolants over a set of `λ`s.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchProfile {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: DivergenceKind,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("interpolation weight must lie in (0, 1), got {lambda}")))
    }
}

/// Density of `(1−λ)x₁ + λx₂` on the grid of `f`.
pub fn interpolant_density(f: &BinnedDensity, lambda: f64) -> Result<BinnedDensity> {
    check_lambda(lambda)?;
    Ok(BinnedDensity::from_raw(*f.grid(), interpolant_mass(f.mass(), lambda)))
}

/// Density of `(x₁ + x₂)/2` on the grid of `f`.
pub fn midpoint_density(f: &BinnedDensity) -> BinnedDensity {
    BinnedDensity::from_raw(*f.grid(), midpoint_mass(f.mass()))
}

/// `divergence(kind, f, Q(λ))` for each `λ` in `lambdas`.
pub fn mismatch_profile(f: &BinnedDensity, lambdas: &[f64], kind: DivergenceKind) -> Result<MismatchProfile> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("profile lambdas must be strictly increasing"));
    }
    let values = lambdas
        .par_iter()
        .map(|&l| {
            let q = interpolant_mass(f.mass(), l);
            divergence_raw(kind, f.mass(), &q, DEFAULT_KL_FLOOR)
        })
        .collect();
    Ok(MismatchProfile { lambdas: lambdas.to_vec(), values, kind })
}

/// Full linear self-convolution `s_k = Σ_{i+j=k} p_i p_j`, length `2n−1`.
pub(crate) fn self_convolve(p: &[f64], out: &mut [f64]) {
    let n = p.len();
    debug_assert_eq!(out.len(), 2 * n - 1);
    out.fill(0.0);
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        for (o, &pj) in out[i..i + n].iter_mut().zip(p) {
            *o += pi * pj;
        }
    }
}

/// Maps sum-index masses onto the half-grid and back onto bins.
fn fold_midpoint(sums: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (s, &m) in sums.iter().enumerate() {
        let k = s / 2;
        if s % 2 == 0 {
            out[k] += m;
        } else {
            out[k] += 0.5 * m;
            out[k + 1] += 0.5 * m;
        }
    }
}

/// Midpoint mass vector of `p`.
pub(crate) fn midpoint_mass(p: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; 2 * p.len() - 1];
    let mut out = vec![0.0; p.len()];
    self_convolve(p, &mut sums);
    fold_midpoint(&sums, &mut out);
    out
}

/// Reusable buffers for repeated midpoint evaluations.
#[derive(Debug, Clone)]
pub(crate) struct MidpointWorkspace {
    sums: Vec<f64>,
    lifted: Vec<f64>,
}

impl MidpointWorkspace {
    pub(crate) fn new(n: usize) -> Self {
        Self { sums: vec![0.0; 2 * n - 1], lifted: vec![0.0; 2 * n - 1] }
    }

    pub(crate) fn midpoint(&mut self, p: &[f64], out: &mut [f64]) {
        self_convolve(p, &mut self.sums);
        fold_midpoint(&self.sums, out);
    }

    /// Vector-Jacobian product of the midpoint map: `out_m = Σ_k r_k ∂q_k/∂p_m`.
    pub(crate) fn pullback(&mut self, p: &[f64], r: &[f64], out: &mut [f64]) {
        let n = p.len();
        // transpose of the fold
        for k in 0..n {
            self.lifted[2 * k] = r[k];
            if k + 1 < n {
                self.lifted[2 * k + 1] = 0.5 * (r[k] + r[k + 1]);
            }
        }
        // ∂q/∂p_m = 2 Σ_j p_j (fold row at m + j)
        out.fill(0.0);
        for (j, &pj) in p.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let w = 2.0 * pj;
            for (o, &u) in out.iter_mut().zip(&self.lifted[j..j + n]) {
                *o += w * u;
            }
        }
    }
}

/// Fractional-index bracket `(lo, weight on lo+1)` for the pair `(i, j)`.
#[inline]
fn bracket(i: usize, j: usize, lambda: f64, last: usize) -> (usize, f64) {
    let t = (1.0 - lambda) * i as f64 + lambda * j as f64;
    debug_assert!(t >= 0.0 && t <= last as f64 + 1e-9, "interpolant left the grid: t = {t}");
    let lo = t.floor() as usize;
    if lo >= last {
        (last, 0.0)
    } else {
        (lo, t - lo as f64)
    }
}

/// General-`λ` interpolant by pairwise accumulation.
pub(crate) fn interpolant_mass(p: &[f64], lambda: f64) -> Vec<f64> {
    let n = p.len();
    let last = n - 1;
    let partials: Vec<Vec<f64>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(PAIR_CHUNK)
        .map(|rows| {
            let mut acc = vec![0.0; n];
            for &i in rows {
                let pi = p[i];
                if pi == 0.0 {
                    continue;
                }
                for (j, &pj) in p.iter().enumerate() {
                    let m = pi * pj;
                    let (lo, w) = bracket(i, j, lambda, last);
                    if w == 0.0 {
                        acc[lo] += m;
                    } else {
                        acc[lo] += (1.0 - w) * m;
                        acc[lo + 1] += w * m;
                    }
                }
            }
            acc
        })
        .collect();
    // fixed-order reduction keeps results scheduler independent
    let mut out = vec![0.0; n];
    for part in &partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out
}

/// Vector-Jacobian product of the general-`λ` map.
pub(crate) fn interpolant_pullback(p: &[f64], r: &[f64], lambda: f64, out: &mut [f64]) {
    let n = p.len();
    let last = n - 1;
    out.fill(0.0);
    for i in 0..n {
        for j in 0..n {
            let (lo, w) = bracket(i, j, lambda, last);
            let v = if w == 0.0 { r[lo] } else { (1.0 - w) * r[lo] + w * r[lo + 1] };
            out[i] += p[j] * v;
            out[j] += p[i] * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{divergence, make_delta, make_truncated_normal, make_uniform, GridSpec};

    fn unit(n: usize) -> GridSpec {
        GridSpec::unit(n).unwrap()
    }

    #[test]
    fn rejects_lambda_outside_open_interval() {
        let f = make_uniform(unit(8));
        for l in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(interpolant_density(&f, l).is_err());
        }
    }

    #[test]
    fn delta_is_a_fixed_point() {
        let f = make_delta(unit(32), 11).unwrap();
        assert_eq!(midpoint_density(&f).mass(), f.mass());
        for l in [0.1, 0.3, 0.5, 0.9] {
            let q = interpolant_density(&f, l).unwrap();
            assert_eq!(q.mass(), f.mass());
        }
    }

    #[test]
    fn uniform_midpoint_is_triangular() {
        let n = 64;
        let q = midpoint_density(&make_uniform(unit(n)));
        let m = q.mass();
        // peak at the two central bins, symmetric, monotone on each side
        assert!((m[n / 2 - 1] - m[n / 2]).abs() < 1e-15);
        for i in 0..n / 2 - 1 {
            assert!(m[i] < m[i + 1]);
            assert!((m[i] - m[n - 1 - i]).abs() < 1e-15);
        }
        // exact: bin k collects sums 2k fully and 2k±1 halved, counts of pairs
        // with sum s are min(s, 2n-2-s)+1
        let nf = n as f64;
        let count = |s: i64| -> f64 {
            if s < 0 || s > 2 * n as i64 - 2 {
                0.0
            } else {
                (s.min(2 * n as i64 - 2 - s) + 1) as f64
            }
        };
        for k in 0..n as i64 {
            let expect = (count(2 * k) + 0.5 * count(2 * k - 1) + 0.5 * count(2 * k + 1)) / (nf * nf);
            assert!((m[k as usize] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_kl_to_midpoint() {
        let f = make_uniform(unit(1024));
        let q = midpoint_density(&f);
        let kl = divergence(DivergenceKind::KlPq, &f, &q, 1e-12).unwrap();
        assert!((kl - (1.0 - 2f64.ln())).abs() < 3e-3, "kl = {kl}");
    }

    #[test]
    fn normal_variance_halves() {
        let f = make_truncated_normal(unit(1024), 0.5, 0.1).unwrap();
        let q = midpoint_density(&f);
        let ratio = q.variance() / f.variance();
        assert!((ratio - 0.5).abs() < 1e-3, "ratio = {ratio}");
        let kl = divergence(DivergenceKind::KlPq, &f, &q, 1e-12).unwrap();
        assert!((kl - 0.5 * (1.0 - 2f64.ln())).abs() < 5e-3, "kl = {kl}");
    }

    #[test]
    fn fast_path_matches_general_path() {
        let f = make_truncated_normal(unit(200), 0.4, 0.07).unwrap();
        let fast = midpoint_density(&f);
        let general = interpolant_density(&f, 0.5).unwrap();
        for (a, b) in fast.mass().iter().zip(general.mass()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn profile_is_symmetric_and_peaks_at_half() {
        let f = make_uniform(unit(128));
        let lambdas: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let prof = mismatch_profile(&f, &lambdas, DivergenceKind::KlPq).unwrap();
        for k in 0..lambdas.len() {
            let mirror = lambdas.len() - 1 - k;
            assert!((prof.values[k] - prof.values[mirror]).abs() < 1e-9);
        }
        let peak = prof.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(lambdas[peak], 0.5);
    }

    #[test]
    fn profile_rejects_unsorted() {
        let f = make_uniform(unit(16));
        assert!(mismatch_profile(&f, &[0.5, 0.3], DivergenceKind::KlPq).is_err());
        assert!(mismatch_profile(&f, &[0.5, 1.0], DivergenceKind::KlPq).is_err());
    }

    fn finite_diff_vjp(p: &[f64], r: &[f64], map: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let step = 1e-6;
        (0..p.len())
            .map(|m| {
                let mut up = p.to_vec();
                let mut dn = p.to_vec();
                up[m] += step;
                dn[m] -= step;
                let qu = map(&up);
                let qd = map(&dn);
                qu.iter().zip(&qd).zip(r).map(|((a, b), w)| w * (a - b)).sum::<f64>() / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn pullbacks_match_finite_differences() {
        let n = 24;
        let p: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7) % 5) as f64).collect();
        let r: Vec<f64> = (0..n).map(|i| ((i * 3) % 11) as f64 - 4.0).collect();

        let mut ws = MidpointWorkspace::new(n);
        let mut got = vec![0.0; n];
        ws.pullback(&p, &r, &mut got);
        let want = finite_diff_vjp(&p, &r, midpoint_mass);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }

        for lambda in [0.2, 0.5, 0.77] {
            interpolant_pullback(&p, &r, lambda, &mut got);
            let want = finite_diff_vjp(&p, &r, |x| interpolant_mass(x, lambda));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "λ={lambda}: {a} vs {b}");
            }
        }
    }
}
