//! On-disk formats: CSV tables, each with a JSON sidecar `<stem>.meta.json` carrying the
//! surface, run parameters, config hash and code version. Writes go through a temp file
//! and a rename so readers never see a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical::ExpansionRow;
use crate::error::{Error, Result};
use crate::field::{GridSpec, TangentField};
use crate::flow::Diagnostic;
use crate::geometry::Surface;
use crate::ode::Trajectory;
use crate::tracker::TrackSet;

pub const SIDECAR_SCHEMA: &str = "vortexflow.sidecar/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    csv.with_file_name(format!("{stem}.meta.json"))
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).ok_or_else(|| Error::Io(format!("bad path {path:?}")))?;
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: String,
    /// trajectory | diagnostics | energy-expansion | green-table | field
    pub kind: String,
    pub surface: Surface,
    pub columns: Vec<String>,
    pub eps: Option<f64>,
    pub grid: Option<[usize; 2]>,
    pub t_star: Option<f64>,
    /// pde | ode, for trajectories
    pub provenance: Option<String>,
    pub time: Option<f64>,
    pub config_hash: String,
    pub version: String,
}

impl Sidecar {
    pub fn new(kind: &str, surface: Surface, columns: &[&str], config_hash: &str) -> Self {
        Self {
            schema: SIDECAR_SCHEMA.into(),
            kind: kind.into(),
            surface,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            eps: None,
            grid: None,
            t_star: None,
            provenance: None,
            time: None,
            config_hash: config_hash.into(),
            version: crate::VERSION.into(),
        }
    }
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Writes the table and its sidecar (sidecar last, so a present sidecar implies a
/// complete table).
pub fn write_table<T: Serialize>(path: &Path, rows: &[T], meta: &Sidecar) -> Result<()> {
    let header: Vec<&str> = meta.columns.iter().map(String::as_str).collect();
    atomic_write(path, &csv_bytes(rows, &header)?)?;
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    atomic_write(&sidecar_path(path), &json)
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Sidecar)> {
    let meta: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)
        .map_err(|e| Error::Format(format!("{}: {e}", sidecar_path(path).display())))?;
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| Error::Format(e.to_string()))?.iter().map(String::from).collect();
    if header != meta.columns {
        return Err(Error::Format(format!("{}: header {header:?} does not match sidecar", path.display())));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| Error::Format(e.to_string()))?;
    Ok((rows, meta))
}

pub const TRAJECTORY_COLUMNS: [&str; 5] = ["t", "vortex_id", "charge", "x1", "x2"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub vortex_id: usize,
    pub charge: i32,
    pub x1: f64,
    pub x2: f64,
}

/// Rows ordered by time, then vortex id.
pub fn track_rows(ts: &TrackSet) -> Vec<TrajectoryRow> {
    let mut rows: Vec<TrajectoryRow> = ts
        .tracks
        .iter()
        .flat_map(|tr| {
            tr.times.iter().zip(&tr.positions).map(move |(&t, p)| TrajectoryRow {
                t,
                vortex_id: tr.id,
                charge: tr.charge,
                x1: p.x1,
                x2: p.x2,
            })
        })
        .collect();
    rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.vortex_id.cmp(&b.vortex_id)));
    rows
}

pub fn ode_rows(tr: &Trajectory) -> Vec<TrajectoryRow> {
    let mut rows = vec![];
    for (t, c) in tr.times.iter().zip(&tr.configs) {
        for (j, (p, d)) in c.a.iter().zip(&c.d).enumerate() {
            rows.push(TrajectoryRow { t: *t, vortex_id: j, charge: *d, x1: p.x1, x2: p.x2 });
        }
    }
    rows
}

pub const DIAGNOSTIC_COLUMNS: [&str; 5] = ["t", "F", "dissipation", "xi1", "xi2"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub dissipation: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl From<&Diagnostic> for DiagnosticRow {
    fn from(d: &Diagnostic) -> Self {
        let x = |k: usize| d.xi.get(k).copied().unwrap_or(f64::NAN);
        Self { t: d.t, f: d.energy, dissipation: d.dissipated, xi1: x(0), xi2: x(1) }
    }
}

pub const EXPANSION_COLUMNS: [&str; 5] = ["eps", "F_eps", "log_term", "W", "R"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCsvRow {
    pub eps: f64,
    #[serde(rename = "F_eps")]
    pub f_eps: f64,
    pub log_term: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl From<&ExpansionRow> for ExpansionCsvRow {
    fn from(e: &ExpansionRow) -> Self {
        Self { eps: e.eps, f_eps: e.f_eps, log_term: e.log_term, w: e.w, r: e.r }
    }
}

pub const GREEN_COLUMNS: [&str; 7] = ["x1", "x2", "y1", "y2", "G", "grad_norm", "H"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenRow {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub grad_norm: f64,
    /// Empty outside the regular-part domain.
    #[serde(rename = "H")]
    pub h: Option<f64>,
}

pub const FIELD_COLUMNS: [&str; 3] = ["node", "re", "im"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub node: usize,
    pub re: f64,
    pub im: f64,
}

pub fn write_field(path: &Path, u: &TangentField, eps: Option<f64>, t: f64, config_hash: &str) -> Result<()> {
    let rows: Vec<FieldRow> = u.w.iter().enumerate().map(|(node, w)| FieldRow { node, re: w.re, im: w.im }).collect();
    let mut meta = Sidecar::new("field", u.grid.surface, &FIELD_COLUMNS, config_hash);
    meta.grid = Some([u.grid.n1, u.grid.n2]);
    meta.eps = eps;
    meta.time = Some(t);
    write_table(path, &rows, &meta)
}

pub fn read_field(path: &Path) -> Result<(TangentField, Sidecar)> {
    let (rows, meta): (Vec<FieldRow>, Sidecar) = read_table(path)?;
    let [n1, n2] = meta.grid.ok_or_else(|| Error::Format("field sidecar without grid".into()))?;
    let grid = GridSpec::new(meta.surface, n1, n2)?;
    if rows.len() != grid.len() || rows.iter().enumerate().any(|(k, r)| r.node != k) {
        return Err(Error::Format(format!("{}: expected nodes 0..{}", path.display(), grid.len())));
    }
    let w = rows.iter().map(|r| num_complex::Complex64::new(r.re, r.im)).collect();
    Ok((TangentField { grid, w }, meta))
}
