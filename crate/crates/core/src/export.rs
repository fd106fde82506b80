//! Artifact writers. Files are written to a temporary sibling and renamed into
//! place, so a reader never observes a partially written artifact.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fde::MomentField;
use crate::params::ModelParams;
use crate::population::{CountsLawReport, EnsembleStats};
use crate::spatial::{FrontStats, SpatialSnapshot};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(".partial-").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error.to_string()))?;
    Ok(())
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

/// Serializes `rows` as CSV with a header taken from the field names.
pub fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub replicate: usize,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "M")]
    pub m: f64,
}

pub fn ensemble_rows(stats: &EnsembleStats) -> impl Iterator<Item = EnsembleRow> + '_ {
    stats
        .counts
        .iter()
        .zip(&stats.total_masses)
        .enumerate()
        .map(|(replicate, (&n, &m))| EnsembleRow { replicate, n, m })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub params: ModelParams,
    #[serde(rename = "R")]
    pub replicates: usize,
    #[serde(rename = "mean_N")]
    pub mean_n: f64,
    #[serde(rename = "se_N")]
    pub se_n: f64,
    #[serde(rename = "mean_M")]
    pub mean_m: f64,
    #[serde(rename = "se_M")]
    pub se_m: f64,
    pub extinct_fraction: f64,
    pub tv_counts: Option<f64>,
    pub ks_limit: Option<f64>,
}

impl EnsembleSummary {
    pub fn new(params: &ModelParams, stats: &EnsembleStats, law: Option<&CountsLawReport>) -> Self {
        Self {
            params: *params,
            replicates: stats.replicates,
            mean_n: stats.mean_n.mean,
            se_n: stats.mean_n.se,
            mean_m: stats.mean_m.mean,
            se_m: stats.mean_m.se,
            extinct_fraction: stats.extinct.mean,
            tv_counts: law.map(|l| l.tv_counts),
            ks_limit: law.and_then(|l| l.ks_limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRow {
    pub sample_index: usize,
    pub xi: f64,
}

pub fn sample_rows(samples: &[f64]) -> impl Iterator<Item = SampleRow> + '_ {
    samples
        .iter()
        .enumerate()
        .map(|(sample_index, &xi)| SampleRow { sample_index, xi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldRow {
    pub m: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "exact_L1")]
    pub exact_l1: f64,
    #[serde(rename = "exact_L2")]
    pub exact_l2: f64,
}

/// Rows of a field dump; `l1` and `l2` must share a grid.
pub fn field_rows(
    l1: &MomentField,
    l2: &MomentField,
    exact_l1: impl Fn(f64) -> f64,
    exact_l2: impl Fn(f64) -> f64,
) -> Vec<FieldRow> {
    (0..l1.values.len())
        .map(|i| {
            let m = l1.grid.node(i);
            FieldRow {
                m,
                l1: l1.values[i],
                l2: l2.values[i],
                exact_l1: exact_l1(m),
                exact_l2: exact_l2(m),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParticleRow {
    pub replicate: usize,
    pub x: f64,
    pub mass: f64,
}

/// Particle dump of one-dimensional snapshots (first coordinate only).
pub fn particle_rows<'a>(
    snapshots: impl IntoIterator<Item = (usize, &'a SpatialSnapshot)>,
) -> Vec<ParticleRow> {
    let mut rows = Vec::new();
    for (replicate, snap) in snapshots {
        for i in 0..snap.n() {
            rows.push(ParticleRow {
                replicate,
                x: snap.position(i)[0],
                mass: snap.masses[i],
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontTableRow {
    pub t: f64,
    pub empirical_radius: Option<f64>,
    pub exact_radius: Option<f64>,
    pub leading_radius: f64,
}

pub fn front_rows(stats: &FrontStats) -> impl Iterator<Item = FrontTableRow> + '_ {
    stats.rows.iter().map(|r| FrontTableRow {
        t: r.t,
        empirical_radius: r.empirical,
        exact_radius: r.exact,
        leading_radius: r.leading,
    })
}
