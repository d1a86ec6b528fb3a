//! On-disk formats: density JSON, CSV tables, raw sample files.
//!
//! Floats are written in the shortest decimal form that parses back to the
//! same `f64`, so every file round-trips exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::{BinnedDensity, GridSpec};
use crate::optimizer::{ShapeReport, SolverConfig, TracePoint};
use crate::sampler::SampleBatch;

use super::CliError;

pub const DENSITY_FILE_VERSION: u32 = 1;
pub const SAMPLE_MAGIC: &[u8; 4] = b"NPPR";
pub const SAMPLE_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityFile {
    pub version: u32,
    pub grid: GridSpec,
    pub mass: Vec<f64>,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub created_by: String,
    /// Solver settings, for solved densities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    /// Free-form description, e.g. "midpoint of normal:0.5,0.1".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

pub fn created_by() -> String {
    format!("npprior {}", env!("CARGO_PKG_VERSION"))
}

impl DensityFile {
    pub fn new(density: &BinnedDensity, metadata: Metadata) -> Self {
        Self { version: DENSITY_FILE_VERSION, grid: *density.grid(), mass: density.mass().to_vec(), metadata }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("density files serialize");
        s.push('\n');
        s
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<(Self, BinnedDensity), CliError> {
        let file: DensityFile = serde_json::from_str(text).map_err(|e| CliError::Invalid(e.to_string()))?;
        if file.version != DENSITY_FILE_VERSION {
            return Err(CliError::Invalid(format!("version: expected {DENSITY_FILE_VERSION}, got {}", file.version)));
        }
        let grid = GridSpec::new(file.grid.min(), file.grid.max(), file.grid.n())
            .map_err(|e| CliError::Invalid(format!("grid: {e}")))?;
        let density =
            BinnedDensity::new(grid, file.mass.clone()).map_err(|e| CliError::Invalid(format!("mass: {e}")))?;
        Ok((file, density))
    }

    pub fn read(path: &Path) -> Result<(Self, BinnedDensity), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read density file {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Invalid(format!("{}: {}", path.display(), e.message())))
    }
}

/// Shortest round-trip decimal, exponent form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("iter,cost_nats,constraint_violation,round\n");
    for t in trace {
        s.push_str(&format!("{},{},{},{}\n", t.iteration, fmt_f64(t.cost), fmt_f64(t.violation), t.round));
    }
    s
}

pub fn shape_text(shape: &ShapeReport) -> String {
    format!(
        "symmetry_deviation = {}\nlobe_count = {}\ntail_mass = {}\n",
        fmt_f64(shape.symmetry_deviation),
        shape.lobe_count,
        fmt_f64(shape.tail_mass)
    )
}

/// One row per sample, no header.
pub fn write_samples_csv(batch: &SampleBatch, out: &mut dyn Write) -> std::io::Result<()> {
    let mut line = String::new();
    for row in batch.rows() {
        line.clear();
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(*x));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// `"NPPR"`, `u32 d`, `u32 count`, `u32` reserved (zero), then the row-major
/// data as little-endian `f64`.
pub fn write_samples_f64le(batch: &SampleBatch, out: &mut dyn Write) -> std::io::Result<()> {
    let d = u32::try_from(batch.d).map_err(std::io::Error::other)?;
    let count = u32::try_from(batch.count).map_err(std::io::Error::other)?;
    let mut header = [0u8; SAMPLE_HEADER_LEN];
    header[..4].copy_from_slice(SAMPLE_MAGIC);
    header[4..8].copy_from_slice(&d.to_le_bytes());
    header[8..12].copy_from_slice(&count.to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(8 * batch.d * 1024);
    for chunk in batch.data.chunks(batch.d * 1024) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

/// Inverse of [`write_samples_f64le`]: `(d, count, data)`.
pub fn read_samples_f64le(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), CliError> {
    if bytes.len() < SAMPLE_HEADER_LEN || &bytes[..4] != SAMPLE_MAGIC {
        return Err(CliError::Invalid("not an NPPR sample file".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes")) as usize;
    let (d, count) = (word(4), word(8));
    let body = &bytes[SAMPLE_HEADER_LEN..];
    if body.len() != 8 * d * count {
        return Err(CliError::Invalid(format!("expected {} data bytes, found {}", 8 * d * count, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((d, count, data))
}
