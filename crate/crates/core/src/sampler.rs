//! Continuous latent samples from binned and parametric priors.
//!
//! Rows are generated in chunks of [`CHUNK_ROWS`]; chunk `c` draws from
//! `stream_rng(seed, c)`, so a batch is a pure function of
//! `(prior, d, count, seed)` however rayon schedules the chunks.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::density::BinnedDensity;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Rng};

/// Rows per independently seeded chunk.
pub const CHUNK_ROWS: usize = 1024;

/// A latent prior.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// I.i.d. `U[min, max)` coordinates.
    Uniform {
        min: f64,
        max: f64,
    },
    Normal {
        mu: f64,
        sigma: f64,
    },
    Cauchy {
        x0: f64,
        gamma_scale: f64,
    },
    /// `z = √r · v` with `v` uniform on the sphere and `r ~ Γ(½, θ)` (scale
    /// convention, so `E‖z‖² = θ/2`). `None` means `θ = 2d`, which matches a
    /// standard normal's expected squared norm.
    GammaRadial {
        theta: Option<f64>,
    },
    /// I.i.d. coordinates from the piecewise-constant density of a binned mass
    /// vector.
    NonParametric(BinnedDensity),
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { min, max } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(invalid(format!("uniform needs finite min < max, got [{min}, {max}]")));
                }
            }
            Self::Normal { mu, sigma } => {
                check_location("normal mu", mu)?;
                check_scale("normal sigma", sigma)?;
            }
            Self::Cauchy { x0, gamma_scale } => {
                check_location("cauchy x0", x0)?;
                check_scale("cauchy scale", gamma_scale)?;
            }
            Self::GammaRadial { theta } => {
                if let Some(theta) = theta {
                    check_scale("gamma theta", theta)?;
                }
            }
            Self::NonParametric(ref density) => {
                BinnedDensity::new(*density.grid(), density.mass().to_vec())?;
            }
        }
        Ok(())
    }

    /// Short tag used in seeds and file names.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Uniform { .. } => "uniform",
            Self::Normal { .. } => "normal",
            Self::Cauchy { .. } => "cauchy",
            Self::GammaRadial { .. } => "gamma",
            Self::NonParametric(_) => "nonparametric",
        }
    }
}

fn check_location(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {x}")))
    }
}

fn check_scale(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

/// `count` row-major samples of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub d: usize,
    pub count: usize,
    pub data: Vec<f64>,
    pub seed: u64,
    /// The prior the rows were drawn from; `None` for derived batches
    /// (interpolations, sphere draws).
    pub prior: Option<PriorSpec>,
}

impl SampleBatch {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    /// Squared Euclidean norm of every row.
    pub fn squared_norms(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().map(|x| x * x).sum()).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
    }
}

fn check_shape(d: usize, count: usize) -> Result<()> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if count == 0 {
        return Err(invalid("count must be at least 1"));
    }
    d.checked_mul(count).ok_or_else(|| invalid("d × count overflows"))?;
    Ok(())
}

/// Fills `data` chunk by chunk, each chunk with its own stream.
fn fill_chunks(d: usize, data: &mut [f64], seed: u64, row: impl Fn(&mut Rng, &mut [f64]) + Sync) {
    data.par_chunks_mut(CHUNK_ROWS * d).enumerate().for_each(|(c, chunk)| {
        let mut rng = stream_rng(seed, c as u64);
        for r in chunk.chunks_exact_mut(d) {
            row(&mut rng, r);
        }
    });
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Overwrites `v` with a uniform direction on the unit sphere.
fn unit_vector(rng: &mut Rng, v: &mut [f64]) {
    loop {
        let mut ss = 0.0;
        for x in v.iter_mut() {
            *x = normal(rng);
            ss += *x * *x;
        }
        if ss > 0.0 {
            let inv = 1.0 / ss.sqrt();
            v.iter_mut().for_each(|x| *x *= inv);
            return;
        }
    }
}

/// Inverse-CDF bin lookup plus uniform jitter inside the bin.
struct BinSampler {
    cdf: Vec<f64>,
    last: usize,
    min: f64,
    width: f64,
}

impl BinSampler {
    fn new(density: &BinnedDensity) -> Self {
        let mut acc = 0.0;
        let cdf: Vec<f64> = density
            .mass()
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        let last = density.mass().iter().rposition(|m| *m > 0.0).unwrap_or(0);
        let total = acc;
        let cdf = cdf.into_iter().map(|c| c / total).collect();
        Self { cdf, last, min: density.grid().min(), width: density.grid().width() }
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        // First bin whose cumulative mass exceeds u; empty bins never qualify.
        let bin = self.cdf.partition_point(|c| *c <= u).min(self.last);
        let jitter: f64 = rng.random();
        self.min + (bin as f64 + jitter) * self.width
    }
}

/// Draws `count` samples of dimension `d` from `prior`.
pub fn sample(prior: &PriorSpec, d: usize, count: usize, seed: u64) -> Result<SampleBatch> {
    check_shape(d, count)?;
    prior.validate()?;
    let mut data = vec![0.0; d * count];
    match *prior {
        PriorSpec::Uniform { min, max } => fill_chunks(d, &mut data, seed, |rng, row| {
            for x in row {
                *x = min + (max - min) * rng.random::<f64>();
            }
        }),
        PriorSpec::Normal { mu, sigma } => fill_chunks(d, &mut data, seed, |rng, row| {
            for x in row {
                *x = mu + sigma * normal(rng);
            }
        }),
        PriorSpec::Cauchy { x0, gamma_scale } => fill_chunks(d, &mut data, seed, |rng, row| {
            for x in row {
                *x = loop {
                    let u: f64 = rng.random();
                    let v = x0 + gamma_scale * (std::f64::consts::PI * (u - 0.5)).tan();
                    if v.is_finite() {
                        break v;
                    }
                };
            }
        }),
        PriorSpec::GammaRadial { theta } => {
            let theta = theta.unwrap_or(2.0 * d as f64);
            // Γ(½, θ) = (θ/2) Z², so √r = |Z| √(θ/2).
            let radius_scale = (0.5 * theta).sqrt();
            fill_chunks(d, &mut data, seed, |rng, row| {
                unit_vector(rng, row);
                let radius = radius_scale * normal(rng).abs();
                row.iter_mut().for_each(|x| *x *= radius);
            })
        }
        PriorSpec::NonParametric(ref density) => {
            let sampler = BinSampler::new(density);
            fill_chunks(d, &mut data, seed, |rng, row| {
                for x in row {
                    *x = sampler.draw(rng);
                }
            })
        }
    }
    Ok(SampleBatch { d, count, data, seed, prior: Some(prior.clone()) })
}

/// Element-wise `(1 − λ) a + λ b`. The result keeps `a`'s seed and has no prior.
pub fn interpolate(a: &SampleBatch, b: &SampleBatch, lambda: f64) -> Result<SampleBatch> {
    if a.d != b.d || a.count != b.count {
        return Err(Error::IncompatibleBatches(format!("{}×{} vs {}×{}", a.count, a.d, b.count, b.d)));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let data = if lambda == 0.0 {
        a.data.clone()
    } else if lambda == 1.0 {
        b.data.clone()
    } else {
        a.data.iter().zip(&b.data).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect()
    };
    Ok(SampleBatch { d: a.d, count: a.count, data, seed: a.seed, prior: None })
}

/// Isotropic unit vectors: normalized standard-normal draws.
pub fn uniform_on_sphere(d: usize, count: usize, seed: u64) -> Result<SampleBatch> {
    check_shape(d, count)?;
    let mut data = vec![0.0; d * count];
    fill_chunks(d, &mut data, seed, unit_vector);
    Ok(SampleBatch { d, count, data, seed, prior: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{kl_raw, make_delta, make_truncated_normal, GridSpec};

    /// Histogram of `values` on `grid` (values outside are dropped) as masses.
    fn hist(values: &[f64], grid: &GridSpec) -> Vec<f64> {
        let mut counts = vec![0.0; grid.n()];
        let mut kept = 0.0;
        for v in values {
            if let Some(i) = grid.bin_of(*v) {
                counts[i] += 1.0;
                kept += 1.0;
            }
        }
        counts.iter().map(|c| c / kept).collect()
    }

    /// Target masses on `grid` from a cdf.
    fn target(grid: &GridSpec, cdf: impl Fn(f64) -> f64) -> Vec<f64> {
        let w: Vec<f64> = (0..grid.n()).map(|i| cdf(grid.edge(i + 1)) - cdf(grid.edge(i))).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    fn normal_cdf(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    // Numerical Recipes erfc, |rel err| < 1.2e-7: plenty for 50-bin masses.
    fn erfc(x: f64) -> f64 {
        let z = x.abs();
        let t = 1.0 / (1.0 + 0.5 * z);
        let r = t
            * (-z * z - 1.26551223
                + t * (1.00002368
                    + t * (0.37409196
                        + t * (0.09678418
                            + t * (-0.18628806
                                + t * (0.27886807
                                    + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
                .exp();
        if x >= 0.0 {
            r
        } else {
            2.0 - r
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let prior = PriorSpec::Normal { mu: 0.0, sigma: 1.0 };
        let a = sample(&prior, 7, 3000, 11).unwrap();
        let b = sample(&prior, 7, 3000, 11).unwrap();
        let c = sample(&prior, 7, 3000, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn chunk_streams_do_not_repeat() {
        let a = sample(&PriorSpec::Uniform { min: 0.0, max: 1.0 }, 1, 2 * CHUNK_ROWS, 5).unwrap();
        assert_ne!(a.data[..CHUNK_ROWS], a.data[CHUNK_ROWS..]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample(&PriorSpec::Normal { mu: 0.0, sigma: 0.0 }, 1, 1, 0).is_err());
        assert!(sample(&PriorSpec::Uniform { min: 1.0, max: 1.0 }, 1, 1, 0).is_err());
        assert!(sample(&PriorSpec::Cauchy { x0: f64::NAN, gamma_scale: 1.0 }, 1, 1, 0).is_err());
        assert!(sample(&PriorSpec::GammaRadial { theta: Some(-1.0) }, 1, 1, 0).is_err());
        assert!(sample(&PriorSpec::Normal { mu: 0.0, sigma: 1.0 }, 0, 1, 0).is_err());
        assert!(sample(&PriorSpec::Normal { mu: 0.0, sigma: 1.0 }, 1, 0, 0).is_err());
    }

    #[test]
    fn delta_samples_stay_in_their_bin() {
        let grid = GridSpec::unit(1024).unwrap();
        for bin in [0, 17, 512, 1023] {
            let prior = PriorSpec::NonParametric(make_delta(grid, bin).unwrap());
            let batch = sample(&prior, 3, 2000, bin as u64).unwrap();
            for x in &batch.data {
                assert!(*x >= grid.edge(bin) && *x < grid.edge(bin + 1), "{x} outside bin {bin}");
            }
        }
    }

    #[test]
    fn nonparametric_histogram_matches_density() {
        // A concentrated density: the finite-sample KL bias grows with the
        // number of occupied bins, roughly (bins − 1) / (2 · count).
        let grid = GridSpec::unit(1024).unwrap();
        let density = make_truncated_normal(grid, 0.4, 0.03).unwrap();
        let batch = sample(&PriorSpec::NonParametric(density.clone()), 1, 50_000, 3).unwrap();
        let kl = kl_raw(&hist(&batch.data, &grid), density.mass(), 1e-12);
        assert!(kl <= 5e-3, "kl = {kl}");
    }

    #[test]
    fn baseline_histograms_match_their_laws() {
        let count = 50_000;
        let check = |prior: PriorSpec, lo: f64, hi: f64, cdf: &dyn Fn(f64) -> f64| {
            let grid = GridSpec::new(lo, hi, 50).unwrap();
            let batch = sample(&prior, 2, count / 2, 21).unwrap();
            let kl = kl_raw(&hist(&batch.data, &grid), &target(&grid, cdf), 1e-12);
            assert!(kl <= 5e-3, "{prior:?}: kl = {kl}");
        };
        check(PriorSpec::Uniform { min: -1.0, max: 2.0 }, -1.0, 2.0, &|x| (x + 1.0) / 3.0);
        check(PriorSpec::Normal { mu: 1.0, sigma: 2.0 }, -7.0, 9.0, &|x| normal_cdf((x - 1.0) / 2.0));
        // Window covering 99% of the Cauchy mass.
        let w = (std::f64::consts::PI * 0.495).tan();
        check(PriorSpec::Cauchy { x0: 0.5, gamma_scale: 1.5 }, 0.5 - 1.5 * w, 0.5 + 1.5 * w, &|x| {
            0.5 + ((x - 0.5) / 1.5).atan() / std::f64::consts::PI
        });
        // In one dimension the radial prior is N(0, θ/2).
        let grid = GridSpec::new(-10.0, 10.0, 50).unwrap();
        let batch = sample(&PriorSpec::GammaRadial { theta: Some(8.0) }, 1, count, 4).unwrap();
        let kl = kl_raw(&hist(&batch.data, &grid), &target(&grid, |x| normal_cdf(x / 2.0)), 1e-12);
        assert!(kl <= 5e-3, "gamma radial: kl = {kl}");
    }

    #[test]
    fn gamma_radial_squared_norm_mean() {
        let d = 100;
        for theta in [None, Some(30.0)] {
            let batch = sample(&PriorSpec::GammaRadial { theta }, d, 50_000, 8).unwrap();
            let sq = batch.squared_norms();
            let mean = sq.iter().sum::<f64>() / sq.len() as f64;
            let expected = theta.unwrap_or(2.0 * d as f64) / 2.0;
            assert!((mean / expected - 1.0).abs() <= 0.02, "theta {theta:?}: mean {mean} vs {expected}");
        }
    }

    #[test]
    fn normal_norms_and_midpoint_norms() {
        let prior = PriorSpec::Normal { mu: 0.0, sigma: 1.0 };
        let a = sample(&prior, 100, 50_000, 1).unwrap();
        let b = sample(&prior, 100, 50_000, 2).unwrap();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let m = mean(a.squared_norms());
        assert!((m / 100.0 - 1.0).abs() <= 0.01, "{m}");
        let mid = interpolate(&a, &b, 0.5).unwrap();
        let mm = mean(mid.squared_norms());
        assert!((mm / 50.0 - 1.0).abs() <= 0.01, "{mm}");
    }

    #[test]
    fn sphere_rows_are_unit_and_isotropic() {
        let batch = uniform_on_sphere(2, 100_000, 9).unwrap();
        for n in batch.norms() {
            assert!((n - 1.0).abs() <= 1e-12);
        }
        let bins = 36;
        let mut counts = vec![0usize; bins];
        for r in batch.rows() {
            let angle = r[1].atan2(r[0]).rem_euclid(std::f64::consts::TAU);
            counts[((angle / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let p = 1.0 / bins as f64;
        let expected = p * batch.count as f64;
        let se = (batch.count as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 3.0 * se, "count {c} vs {expected}");
        }

        let d = 5;
        let batch = uniform_on_sphere(d, 20_000, 10).unwrap();
        for k in 0..d {
            let mean = batch.rows().map(|r| r[k]).sum::<f64>() / batch.count as f64;
            // Var of one coordinate of a unit vector is 1/d.
            let se = (1.0 / d as f64 / batch.count as f64).sqrt();
            assert!(mean.abs() <= 4.0 * se, "coordinate {k} mean {mean}");
        }
    }

    #[test]
    fn interpolate_endpoints_and_shapes() {
        let prior = PriorSpec::Normal { mu: 0.0, sigma: 1.0 };
        let a = sample(&prior, 4, 100, 1).unwrap();
        let b = sample(&prior, 4, 100, 2).unwrap();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap().data, a.data);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap().data, b.data);
        assert_eq!(interpolate(&a, &a, 0.5).unwrap().data, a.data);
        let c = sample(&prior, 3, 100, 1).unwrap();
        assert!(matches!(interpolate(&a, &c, 0.5), Err(Error::IncompatibleBatches(_))));
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn midpoint_halves_coordinate_variance() {
        let prior = PriorSpec::Uniform { min: 0.0, max: 1.0 };
        let a = sample(&prior, 10, 20_000, 1).unwrap();
        let b = sample(&prior, 10, 20_000, 2).unwrap();
        let mid = interpolate(&a, &b, 0.5).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let ratio = var(&mid.data) / (1.0 / 12.0);
        assert!((ratio - 0.5).abs() <= 0.01, "{ratio}");
    }
}
