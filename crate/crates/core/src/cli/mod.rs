//! The `npprior` command line.
//!
//! ```text
//! npprior solve     [--config run.toml] [--n 1024] [--xi 0.75] ... [--out-dir DIR]
//! npprior analyze   uniform normal:0.5,0.1 density.json ... [--out-dir DIR]
//! npprior sample    --prior SPEC --d 100 --count 50000 [--format csv|f64le] [--out FILE]
//! npprior normdiag  --prior SPEC [--dims 5,10,50,100,200] [--count 50000] [--out-dir DIR]
//! ```
//!
//! Exit codes: 0 success, 2 invalid input, 3 solver did not converge (outputs
//! still written), 4 I/O failure. Inputs are validated before anything is
//! written. `NPPRIOR_THREADS` caps the worker threads (0 or unset = one per
//! core).

pub mod config;
pub mod files;
pub mod spec;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::density::{DivergenceKind, GridSpec};
use crate::diagnostics::{mismatch_table, norm_overlap_grid, DEFAULT_BINS};
use crate::interpolant::midpoint_density;
use crate::optimizer::{shape_report, solve_prior};
use crate::sampler::sample;

use config::RunConfig;
use files::{created_by, fmt_f64, DensityFile, Metadata};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const THREADS_ENV: &str = "NPPRIOR_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => m,
        }
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "npprior", version, about = "Non-parametric latent priors with low interpolation mismatch")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for a prior that matches its own midpoint distribution.
    Solve(SolveArgs),
    /// KL between densities and their midpoint distributions.
    Analyze(AnalyzeArgs),
    /// Draw latent samples from a prior.
    Sample(SampleArgs),
    /// Norm distributions of prior and midpoint samples across dimensions.
    Normdiag(NormdiagArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// TOML file with any of the keys below (snake_case); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of bins on [0, 1].
    #[arg(long)]
    n: Option<usize>,
    /// Minimum index variance.
    #[arg(long)]
    xi: Option<f64>,
    /// Interpolation weight of the matched distribution.
    #[arg(long)]
    lambda: Option<f64>,
    /// kl_pq, kl_qp, jeffreys_mid or l2.
    #[arg(long)]
    kind: Option<DivergenceKind>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    max_fun_evals: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// uniform, perturbed, normal:mu,sigma or delta:bin.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Floor of KL denominators.
    #[arg(long)]
    eps: Option<f64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Density file name inside the output directory (default density.json).
    #[arg(long)]
    density_file: Option<String>,
    /// Trace file name (default trace.csv).
    #[arg(long)]
    trace_file: Option<String>,
    /// Shape report file name (default shape.txt).
    #[arg(long)]
    shape_file: Option<String>,
}

impl SolveArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            n: self.n,
            xi: self.xi,
            lambda: self.lambda,
            kind: self.kind,
            max_iters: self.max_iters,
            max_fun_evals: self.max_fun_evals,
            rel_tol: self.rel_tol,
            restarts: self.restarts,
            init: self.init.clone(),
            seed: self.seed,
            eps: self.eps,
            out_dir: self.out_dir.clone(),
            density_file: self.density_file.clone(),
            trace_file: self.trace_file.clone(),
            shape_file: self.shape_file.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Density files or builtins: uniform, normal:mu,sigma, cauchy:x0,g
    /// (truncated to [0, 1]).
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Bins used for builtins.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Name of the results table inside the output directory.
    #[arg(long, default_value = "mismatch.csv")]
    csv: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SampleFormat {
    Csv,
    F64le,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// uniform[:min,max], normal[:mu,sigma], cauchy[:x0,g], gamma[:theta]
    /// (θ defaults to 2d) or a density file.
    #[arg(long)]
    prior: String,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SampleFormat::Csv)]
    format: SampleFormat,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NormdiagArgs {
    /// Same syntax as `sample --prior`.
    #[arg(long)]
    prior: String,
    #[arg(long, value_delimiter = ',', default_value = "5,10,50,100,200")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 50_000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(cli.command, out, err)));
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Invalid(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker threads: {e}")))
}

fn dispatch(command: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32, CliError> {
    match command {
        Command::Solve(a) => cmd_solve(&a, out, err),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Sample(a) => cmd_sample(&a, out),
        Command::Normdiag(a) => cmd_normdiag(&a, out),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn say(out: &mut (dyn Write + Send), text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn cmd_solve(args: &SolveArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32, CliError> {
    let file = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let (cfg, paths) = file.overlay(args.flags()).resolve()?;
    if cfg.xi == 0.0 {
        let _ = writeln!(
            err,
            "warning: xi = 0 leaves the variance unconstrained; the optimum collapses toward a single bin"
        );
    }
    for path in [&paths.density, &paths.trace, &paths.shape] {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
    }

    let report = solve_prior(&cfg).map_err(|e| CliError::Invalid(e.to_string()))?;
    let shape = shape_report(&report.density);
    let metadata = Metadata {
        created_by: created_by(),
        config: Some(cfg.clone()),
        final_kl: Some(report.final_kl_to_midpoint),
        seed: Some(cfg.seed),
        converged: Some(report.converged),
        source: None,
    };
    write_file(&paths.density, DensityFile::new(&report.density, metadata).to_json().as_bytes())?;
    write_file(&paths.trace, files::trace_csv(&report.trace).as_bytes())?;
    let shape_text = files::shape_text(&shape);
    write_file(&paths.shape, shape_text.as_bytes())?;

    say(out, format_args!("final_kl_to_midpoint = {}", fmt_f64(report.final_kl_to_midpoint)))?;
    say(out, format_args!("index_variance = {}", fmt_f64(report.density.index_variance())))?;
    say(out, format_args!("converged = {}", report.converged))?;
    say(out, format_args!("best_restart = {} of {}", report.best_restart, report.restarts_run))?;
    say(out, format_args!("iterations = {}", report.iterations()))?;
    out.write_all(shape_text.as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    say(out, format_args!("wrote {}", paths.density.display()))?;

    if report.converged {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(err, "warning: solver stopped before converging; outputs are marked converged = false");
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// File-name-safe version of an input name.
fn slug(name: &str) -> String {
    let base = name.strip_suffix(".json").unwrap_or(name);
    let stem = Path::new(base).file_name().and_then(|s| s.to_str()).unwrap_or(base);
    let s: String =
        stem.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    if s.is_empty() {
        "density".into()
    } else {
        s
    }
}

fn cmd_analyze(args: &AnalyzeArgs, out: &mut (dyn Write + Send)) -> Result<i32, CliError> {
    let grid = GridSpec::unit(args.n).map_err(|e| CliError::Invalid(format!("n: {e}")))?;
    let densities = args
        .inputs
        .iter()
        .map(|name| spec::load_density(name, grid).map(|d| (name.clone(), d)))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(&args.out_dir)?;

    let table = mismatch_table(&densities);
    let mut csv = String::from("name,kl_prior_vs_midpoint\n");
    for (i, ((name, kl), (_, density))) in table.iter().zip(&densities).enumerate() {
        csv.push_str(&format!("{},{}\n", csv_field(name), fmt_f64(*kl)));
        say(out, format_args!("{name}\t{}", fmt_f64(*kl)))?;
        let meta =
            Metadata { created_by: created_by(), source: Some(format!("midpoint of {name}")), ..Default::default() };
        let path = args.out_dir.join(format!("midpoint_{i}_{}.json", slug(name)));
        write_file(&path, DensityFile::new(&midpoint_density(density), meta).to_json().as_bytes())?;
    }
    write_file(&args.out_dir.join(&args.csv), csv.as_bytes())?;
    Ok(EXIT_OK)
}

/// Quotes a CSV field when it contains separators or quotes.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_sample(args: &SampleArgs, out: &mut (dyn Write + Send)) -> Result<i32, CliError> {
    let prior = spec::parse_prior(&args.prior)?;
    if args.format == SampleFormat::F64le && (u32::try_from(args.d).is_err() || u32::try_from(args.count).is_err()) {
        return Err(CliError::Invalid("f64le files hold at most 2^32 − 1 rows and columns".into()));
    }
    let batch = sample(&prior, args.d, args.count, args.seed).map_err(|e| CliError::Invalid(e.to_string()))?;
    let emit = |w: &mut dyn Write| match args.format {
        SampleFormat::Csv => files::write_samples_csv(&batch, w),
        SampleFormat::F64le => files::write_samples_f64le(&batch, w),
    };
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = std::io::BufWriter::new(file);
            emit(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))?;
        }
        None => {
            emit(out).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_normdiag(args: &NormdiagArgs, out: &mut (dyn Write + Send)) -> Result<i32, CliError> {
    let prior = spec::parse_prior(&args.prior)?;
    if args.dims.is_empty() || args.dims.contains(&0) {
        return Err(CliError::Invalid("dims must be positive".into()));
    }
    if args.count < 1000 {
        return Err(CliError::Invalid(format!("count must be at least 1000, got {}", args.count)));
    }
    if args.bins == 0 {
        return Err(CliError::Invalid("bins must be positive".into()));
    }
    let reports = norm_overlap_grid(&prior, &args.dims, args.count, args.bins, args.seed)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    create_dir(&args.out_dir)?;

    let mut summary = String::from("d,kl,overlap\n");
    say(out, "d\tkl\toverlap")?;
    for r in &reports {
        let mut csv = String::from("bin_center,prior_mass,midpoint_mass\n");
        for ((c, p), q) in r.prior_hist.centers().iter().zip(&r.prior_hist.mass).zip(&r.mid_hist.mass) {
            csv.push_str(&format!("{},{},{}\n", fmt_f64(*c), fmt_f64(*p), fmt_f64(*q)));
        }
        write_file(&args.out_dir.join(format!("norms_d{}.csv", r.d)), csv.as_bytes())?;
        summary.push_str(&format!("{},{},{}\n", r.d, fmt_f64(r.kl_prior_vs_mid), fmt_f64(r.overlap)));
        say(out, format_args!("{}\t{}\t{}", r.d, fmt_f64(r.kl_prior_vs_mid), fmt_f64(r.overlap)))?;
    }
    write_file(&args.out_dir.join("summary.csv"), summary.as_bytes())?;
    Ok(EXIT_OK)
}
