//! Colon-parameter prior names, e.g. `normal:0.5,0.1`.

use std::path::Path;

use crate::density::{make_truncated_cauchy, make_truncated_normal, make_uniform, BinnedDensity, GridSpec};
use crate::sampler::PriorSpec;

use super::files::DensityFile;
use super::CliError;

fn split(spec: &str) -> (String, Option<&str>) {
    let s = spec.trim();
    let (head, args) = s.split_once(':').map_or((s, None), |(h, a)| (h, Some(a)));
    (head.to_ascii_lowercase(), args)
}

fn numbers(spec: &str, args: Option<&str>, want: usize, usage: &str) -> Result<Option<Vec<f64>>, CliError> {
    let Some(args) = args else { return Ok(None) };
    let nums = args
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Invalid(format!("bad number in '{spec}', expected {usage}")))?;
    if nums.len() != want {
        return Err(CliError::Invalid(format!("'{spec}' has {} parameters, expected {usage}", nums.len())));
    }
    Ok(Some(nums))
}

fn is_builtin(head: &str) -> bool {
    matches!(head, "uniform" | "normal" | "cauchy" | "gamma")
}

/// A builtin 1-D density on `grid` (`uniform`, `normal:mu,sigma`,
/// `cauchy:x0,g`, truncated to the grid), or `None` if `spec` is not a
/// builtin name.
pub fn builtin_density(spec: &str, grid: GridSpec) -> Option<Result<BinnedDensity, CliError>> {
    let (head, args) = split(spec);
    let density = |r: crate::Result<BinnedDensity>| r.map_err(|e| CliError::Invalid(format!("{spec}: {e}")));
    let out = match head.as_str() {
        "uniform" => match args {
            None => Ok(make_uniform(grid)),
            Some(_) => Err(CliError::Invalid(format!("'{spec}': uniform takes no parameters here"))),
        },
        "normal" => match numbers(spec, args, 2, "normal:mu,sigma") {
            Ok(Some(v)) => density(make_truncated_normal(grid, v[0], v[1])),
            Ok(None) => Err(CliError::Invalid(format!("'{spec}': expected normal:mu,sigma"))),
            Err(e) => Err(e),
        },
        "cauchy" => match numbers(spec, args, 2, "cauchy:x0,g") {
            Ok(Some(v)) => density(make_truncated_cauchy(grid, v[0], v[1])),
            Ok(None) => Err(CliError::Invalid(format!("'{spec}': expected cauchy:x0,g"))),
            Err(e) => Err(e),
        },
        _ => return None,
    };
    Some(out)
}

/// A density from a builtin name or a density file path.
pub fn load_density(spec: &str, grid: GridSpec) -> Result<BinnedDensity, CliError> {
    match builtin_density(spec, grid) {
        Some(r) => r,
        None => DensityFile::read(Path::new(spec)).map(|(_, d)| d),
    }
}

/// A sampling prior: `uniform[:min,max]` (default 0,1), `normal[:mu,sigma]`
/// (default 0,1), `cauchy[:x0,g]` (default 0,1), `gamma[:theta]` (default
/// 2d), or a density file path.
pub fn parse_prior(spec: &str) -> Result<PriorSpec, CliError> {
    let (head, args) = split(spec);
    if !is_builtin(&head) {
        return DensityFile::read(Path::new(spec)).map(|(_, d)| PriorSpec::NonParametric(d));
    }
    let prior = match head.as_str() {
        "uniform" => {
            let v = numbers(spec, args, 2, "uniform:min,max")?.unwrap_or(vec![0.0, 1.0]);
            PriorSpec::Uniform { min: v[0], max: v[1] }
        }
        "normal" => {
            let v = numbers(spec, args, 2, "normal:mu,sigma")?.unwrap_or(vec![0.0, 1.0]);
            PriorSpec::Normal { mu: v[0], sigma: v[1] }
        }
        "cauchy" => {
            let v = numbers(spec, args, 2, "cauchy:x0,g")?.unwrap_or(vec![0.0, 1.0]);
            PriorSpec::Cauchy { x0: v[0], gamma_scale: v[1] }
        }
        _ => PriorSpec::GammaRadial { theta: numbers(spec, args, 1, "gamma:theta")?.map(|v| v[0]) },
    };
    prior.validate().map_err(|e| CliError::Invalid(format!("{spec}: {e}")))?;
    Ok(prior)
}
