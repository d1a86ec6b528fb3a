//! `solve` configuration: TOML file, command-line flags, defaults.
//!
//! Every key is optional in both sources. A flag beats the file, the file
//! beats the default. Unknown keys in the file are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::density::DivergenceKind;
use crate::optimizer::{Init, SolverConfig};

use super::CliError;

pub const DEFAULT_DENSITY_FILE: &str = "density.json";
pub const DEFAULT_TRACE_FILE: &str = "trace.csv";
pub const DEFAULT_SHAPE_FILE: &str = "shape.txt";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: Option<usize>,
    pub xi: Option<f64>,
    pub lambda: Option<f64>,
    pub kind: Option<DivergenceKind>,
    pub max_iters: Option<usize>,
    pub max_fun_evals: Option<usize>,
    pub rel_tol: Option<f64>,
    pub restarts: Option<usize>,
    /// Same mini-syntax as `--init`.
    pub init: Option<String>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub density_file: Option<String>,
    pub trace_file: Option<String>,
    pub shape_file: Option<String>,
}

/// Where `solve` writes its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub density: PathBuf,
    pub trace: PathBuf,
    pub shape: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Invalid(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        RunConfig {
            n: over.n.or(self.n),
            xi: over.xi.or(self.xi),
            lambda: over.lambda.or(self.lambda),
            kind: over.kind.or(self.kind),
            max_iters: over.max_iters.or(self.max_iters),
            max_fun_evals: over.max_fun_evals.or(self.max_fun_evals),
            rel_tol: over.rel_tol.or(self.rel_tol),
            restarts: over.restarts.or(self.restarts),
            init: over.init.or(self.init),
            seed: over.seed.or(self.seed),
            eps: over.eps.or(self.eps),
            out_dir: over.out_dir.or(self.out_dir),
            density_file: over.density_file.or(self.density_file),
            trace_file: over.trace_file.or(self.trace_file),
            shape_file: over.shape_file.or(self.shape_file),
        }
    }

    /// Fills defaults and validates the solver part.
    pub fn resolve(&self) -> Result<(SolverConfig, OutputPaths), CliError> {
        let d = SolverConfig::default();
        let init = match &self.init {
            Some(s) => s.parse::<Init>().map_err(|e| CliError::Invalid(format!("init: {e}")))?,
            None => d.init,
        };
        let cfg = SolverConfig {
            n: self.n.unwrap_or(d.n),
            xi: self.xi.unwrap_or(d.xi),
            lambda: self.lambda.unwrap_or(d.lambda),
            kind: self.kind.unwrap_or(d.kind),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            max_fun_evals: self.max_fun_evals.unwrap_or(d.max_fun_evals),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            restarts: self.restarts.unwrap_or(d.restarts),
            init,
            seed: self.seed.unwrap_or(d.seed),
            eps: self.eps.unwrap_or(d.eps),
        };
        cfg.validate().map_err(|e| CliError::Invalid(e.to_string()))?;

        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let file = |name: &Option<String>, default: &str| -> Result<PathBuf, CliError> {
            let name = name.as_deref().unwrap_or(default);
            if name.is_empty() {
                return Err(CliError::Invalid("output file names must not be empty".into()));
            }
            Ok(dir.join(name))
        };
        let paths = OutputPaths {
            density: file(&self.density_file, DEFAULT_DENSITY_FILE)?,
            trace: file(&self.trace_file, DEFAULT_TRACE_FILE)?,
            shape: file(&self.shape_file, DEFAULT_SHAPE_FILE)?,
        };
        if paths.density == paths.trace || paths.density == paths.shape || paths.trace == paths.shape {
            return Err(CliError::Invalid("density, trace and shape outputs must be distinct files".into()));
        }
        Ok((cfg, paths))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let cfg = RunConfig::from_toml(
            r#"
            n = 64
            xi = 0.5
            lambda = 0.3
            kind = "jeffreys_mid"
            max_iters = 10
            max_fun_evals = 20
            rel_tol = 1e-6
            restarts = 2
            init = "delta:3"
            seed = 9
            eps = 1e-10
            out_dir = "out"
            density_file = "p.json"
            trace_file = "t.csv"
            shape_file = "s.txt"
            "#,
        )
        .unwrap();
        let (solver, paths) = cfg.resolve().unwrap();
        assert_eq!(solver.kind, DivergenceKind::JeffreysMid);
        assert_eq!(solver.init, Init::DeltaAt { bin: 3 });
        assert_eq!(paths.trace, PathBuf::from("out/t.csv"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("nn = 3").is_err());
        assert!(RunConfig::from_toml("xi = \"big\"").is_err());
        assert!(RunConfig::from_toml("kind = \"hellinger\"").is_err());
        let bad = RunConfig { xi: Some(1e9), ..Default::default() };
        assert!(bad.resolve().is_err());
        let clash = RunConfig { trace_file: Some("x".into()), shape_file: Some("x".into()), ..Default::default() };
        assert!(clash.resolve().is_err());
    }

    #[test]
    fn defaults_match_solver_defaults() {
        let (solver, paths) = RunConfig::default().resolve().unwrap();
        assert_eq!(solver, SolverConfig::default());
        assert_eq!(paths.density, PathBuf::from("./density.json"));
    }

    #[test]
    fn precedence_matrix() {
        // Each key independently: (file?, flag?) → expected source.
        for mask in 0..4u8 {
            let in_file = mask & 1 != 0;
            let in_flag = mask & 2 != 0;
            let file = RunConfig {
                n: in_file.then_some(100),
                xi: in_file.then_some(1.0),
                seed: in_file.then_some(5),
                init: in_file.then(|| "uniform".to_string()),
                out_dir: in_file.then(|| PathBuf::from("from_file")),
                ..Default::default()
            };
            let flags = RunConfig {
                n: in_flag.then_some(200),
                xi: in_flag.then_some(2.0),
                seed: in_flag.then_some(6),
                init: in_flag.then(|| "delta:7".to_string()),
                out_dir: in_flag.then(|| PathBuf::from("from_flag")),
                ..Default::default()
            };
            let (cfg, paths) = file.overlay(flags).resolve().unwrap();
            let d = SolverConfig::default();
            let (n, xi, seed, init, dir) = match (in_file, in_flag) {
                (_, true) => (200, 2.0, 6, Init::DeltaAt { bin: 7 }, "from_flag"),
                (true, false) => (100, 1.0, 5, Init::Uniform, "from_file"),
                (false, false) => (d.n, d.xi, d.seed, d.init, "."),
            };
            assert_eq!((cfg.n, cfg.xi, cfg.seed, cfg.init), (n, xi, seed, init), "mask {mask}");
            assert_eq!(paths.density, PathBuf::from(dir).join(DEFAULT_DENSITY_FILE));
        }
    }
}
