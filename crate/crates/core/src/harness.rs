//! Experiment driver behind the `vortexflow` binary. Every subcommand is a function of
//! the parsed config; the `cmd_*` wrappers write their outputs (CSV + sidecar, or JSON)
//! into the output directory.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::{energy_expansion, reconstruct_canonical, reconstruct_canonical_audit, well_prepared_initial, ExpansionRow};
use crate::error::Error;
use crate::field::{gl_energy, vorticity_field, GridSpec};
use crate::flow::{FlowRun, GlFlow};
use crate::geometry::{antipode, geodesic_distance, ChartPoint, Surface, TangentVec};
use crate::green::{eigen_sum_oracle, GreenFunction};
use crate::io::{self, Sidecar};
use crate::ode::{LimitFlow, OdeState, Trajectory};
use crate::renorm::{lattice_element, nearest_lattice_xi, HarmonicCoeffs, Renormalized, VortexConfig};
use crate::tracker::{detect_with, track, Frame, Refine, TrackSet};

#[derive(Debug, Clone, PartialEq)]
pub enum HarnessError {
    Config(String),
    Invariant(String),
    Divergence(String),
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invariant(_) => 1,
            HarnessError::Config(_) | HarnessError::Io(_) => 2,
            HarnessError::Divergence(_) => 3,
        }
    }
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "config error: {m}"),
            HarnessError::Invariant(m) => write!(f, "invariant failure: {m}"),
            HarnessError::Divergence(m) => write!(f, "numerical divergence: {m}"),
            HarnessError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } | Error::Stiff(_) => HarnessError::Divergence(e.to_string()),
            Error::Io(m) => HarnessError::Io(m),
            Error::Format(m) => HarnessError::Io(m),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

pub type HResult<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConf {
    pub n1: usize,
    pub n2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexConf {
    #[serde(default)]
    pub positions: Vec<[f64; 2]>,
    #[serde(default)]
    pub charges: Vec<i32>,
}

/// How ξ⁰ is picked in L(a, d).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiRule {
    /// Lattice element nearest to `target` (default 0).
    Nearest { target: Option<Vec<f64>> },
    /// ξ = α⁻¹(2πm − ζ).
    Lattice { m: Vec<i64> },
}

impl Default for XiRule {
    fn default() -> Self {
        XiRule::Nearest { target: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConf {
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Compare/PDE horizon; when absent, half the ODE collision time (or `ode_horizon`
    /// if the ODE does not collide).
    pub horizon: Option<f64>,
    #[serde(default = "default_ode_horizon")]
    pub ode_horizon: f64,
    #[serde(default = "default_ode_dt")]
    pub ode_dt: f64,
    /// PDE step; default 0.1 ε²/|log ε|.
    pub dt: Option<f64>,
    /// Steps between tracked frames.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Collision radius in units of ε, capped at half the initial minimum separation.
    #[serde(default = "default_collision_factor")]
    pub collision_factor: f64,
}

fn default_ode_horizon() -> f64 {
    1.0
}
fn default_ode_dt() -> f64 {
    1e-4
}
fn default_stride() -> usize {
    5
}
fn default_collision_factor() -> f64 {
    6.0
}

impl Default for RunConf {
    fn default() -> Self {
        Self {
            eps: vec![],
            horizon: None,
            ode_horizon: default_ode_horizon(),
            ode_dt: default_ode_dt(),
            dt: None,
            stride: default_stride(),
            collision_factor: default_collision_factor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConf {
    #[serde(default = "default_green_rows")]
    pub rows: usize,
}

fn default_green_rows() -> usize {
    20
}

impl Default for GreenConf {
    fn default() -> Self {
        Self { rows: default_green_rows() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub surface: Surface,
    pub grid: GridConf,
    #[serde(default = "empty_vortices")]
    pub vortices: VortexConf,
    #[serde(default)]
    pub xi: XiRule,
    #[serde(default)]
    pub run: RunConf,
    #[serde(default)]
    pub green: GreenConf,
    /// Output directory (overridden by `--out`).
    pub output: Option<PathBuf>,
}

fn empty_vortices() -> VortexConf {
    VortexConf { positions: vec![], charges: vec![] }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> HResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> HResult<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.surface.validate().map_err(|e| HarnessError::Config(format!("surface: {e}")))?;
        GridSpec::new(self.surface, self.grid.n1, self.grid.n2).map_err(|e| HarnessError::Config(format!("grid: {e}")))?;
        if self.vortices.positions.len() != self.vortices.charges.len() {
            return bad(format!(
                "vortices: {} positions but {} charges",
                self.vortices.positions.len(),
                self.vortices.charges.len()
            ));
        }
        for (k, e) in self.run.eps.iter().enumerate() {
            if !(*e > 0.0 && *e < 1.0) {
                return bad(format!("run.eps[{k}] = {e} must lie in (0, 1)"));
            }
        }
        if self.run.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("run.eps must be strictly decreasing".into());
        }
        if let Some(h) = self.run.horizon {
            if !(h >= 0.0 && h.is_finite()) {
                return bad(format!("run.horizon = {h} must be finite and non-negative"));
            }
        }
        if !(self.run.ode_dt > 0.0) || !(self.run.ode_horizon >= 0.0) {
            return bad("run.ode_dt must be positive and run.ode_horizon non-negative".into());
        }
        if let Some(dt) = self.run.dt {
            if !(dt > 0.0) {
                return bad(format!("run.dt = {dt} must be positive"));
            }
        }
        if self.run.stride == 0 {
            return bad("run.stride must be at least 1".into());
        }
        if !(self.run.collision_factor > 0.0) {
            return bad("run.collision_factor must be positive".into());
        }
        let c = self.config_vortices();
        crate::renorm::check_admissible(&c, &self.surface).map_err(|e| HarnessError::Config(format!("vortices: {e}")))?;
        self.initial_xi()?;
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.surface, self.grid.n1, self.grid.n2).expect("validated grid")
    }

    pub fn config_vortices(&self) -> VortexConfig {
        VortexConfig::new(
            self.vortices.positions.iter().map(|p| self.surface.reduce(ChartPoint::new(p[0], p[1]))).collect(),
            self.vortices.charges.clone(),
        )
    }

    pub fn initial_xi(&self) -> HResult<HarmonicCoeffs> {
        let s = &self.surface;
        let c = self.config_vortices();
        let xi = match &self.xi {
            XiRule::Nearest { target } => {
                let t = match target {
                    Some(t) => HarmonicCoeffs::new(t.clone()),
                    None => HarmonicCoeffs::zeros(s),
                };
                nearest_lattice_xi(&c, s, &t)
            }
            XiRule::Lattice { m } => lattice_element(&c, s, m),
        };
        xi.map_err(|e| HarnessError::Config(format!("xi: {e}")))
    }
}

/// A config together with the hash of the text it was parsed from.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub cfg: ExperimentConfig,
    pub hash: String,
}

impl Loaded {
    pub fn from_text(text: &str) -> HResult<Self> {
        Ok(Self { cfg: ExperimentConfig::from_toml(text)?, hash: io::sha256_hex(text.as_bytes()) })
    }

    pub fn from_path(path: &Path) -> HResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    fn sidecar(&self, kind: &str, columns: &[&str]) -> Sidecar {
        Sidecar::new(kind, self.cfg.surface, columns, &self.hash)
    }
}

fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p")
}

fn require_torus(cfg: &ExperimentConfig) -> HResult<()> {
    if cfg.surface.is_torus() {
        Ok(())
    } else {
        Err(HarnessError::Config("PDE is torus-only".into()))
    }
}

pub fn collision_radius(cfg: &ExperimentConfig, eps: f64) -> f64 {
    let c = cfg.config_vortices();
    let r = cfg.run.collision_factor * eps;
    if c.len() >= 2 {
        r.min(0.5 * c.min_separation(&cfg.surface))
    } else {
        r
    }
}

// ---------------------------------------------------------------- ODE

pub fn run_ode(cfg: &ExperimentConfig) -> HResult<Trajectory> {
    let s = cfg.surface;
    let st = OdeState::new(&s, cfg.config_vortices(), cfg.initial_xi()?)?;
    Ok(LimitFlow::new(&s)?.integrate(&st, cfg.run.ode_horizon, cfg.run.ode_dt)?)
}

pub fn cmd_simulate_ode(l: &Loaded, out: &Path) -> HResult<Trajectory> {
    let tr = run_ode(&l.cfg)?;
    let mut meta = l.sidecar("trajectory", &io::TRAJECTORY_COLUMNS);
    meta.t_star = tr.t_star;
    meta.provenance = Some("ode".into());
    io::write_table(&out.join("trajectory_ode.csv"), &io::ode_rows(&tr), &meta)?;
    log::info!("ode: {} samples, T* = {:?}", tr.times.len(), tr.t_star);
    Ok(tr)
}

// ---------------------------------------------------------------- PDE

#[derive(Clone, Debug)]
pub struct PdeOutcome {
    pub eps: f64,
    pub tracks: TrackSet,
    pub run: FlowRun,
    /// Total detected charge per frame.
    pub frame_charges: Vec<i32>,
}

pub fn run_pde(cfg: &ExperimentConfig, eps: f64, horizon: f64) -> HResult<PdeOutcome> {
    require_torus(cfg)?;
    let g = cfg.grid();
    let c = cfg.config_vortices();
    let u0 = well_prepared_initial(&c, &cfg.initial_xi()?, eps, &g)?;
    let flow = GlFlow::new(&g, eps, cfg.run.dt)?;
    let mut frames = vec![];
    let mut charges = vec![];
    let run = flow.run(u0, horizon, cfg.run.stride, |st| {
        charges.push(vorticity_field(&st.field).total_charge());
        frames.push(Frame { t: st.t, detections: detect_with(&st.field, Refine::Zero) });
        Ok(())
    })?;
    let tracks = track(&frames, &cfg.surface, collision_radius(cfg, eps));
    Ok(PdeOutcome { eps, tracks, run, frame_charges: charges })
}

fn pde_horizon(cfg: &ExperimentConfig) -> HResult<f64> {
    if let Some(h) = cfg.run.horizon {
        return Ok(h);
    }
    let tr = run_ode(cfg)?;
    Ok(tr.t_star.map(|t| 0.5 * t).unwrap_or(cfg.run.ode_horizon))
}

fn write_pde(l: &Loaded, out: &Path, o: &PdeOutcome) -> HResult<()> {
    let tag = eps_tag(o.eps);
    let mut meta = l.sidecar("trajectory", &io::TRAJECTORY_COLUMNS);
    meta.eps = Some(o.eps);
    meta.grid = Some([l.cfg.grid.n1, l.cfg.grid.n2]);
    meta.t_star = o.tracks.t_star;
    meta.provenance = Some("pde".into());
    io::write_table(&out.join(format!("trajectory_pde_eps{tag}.csv")), &io::track_rows(&o.tracks), &meta)?;
    let mut meta = l.sidecar("diagnostics", &io::DIAGNOSTIC_COLUMNS);
    meta.eps = Some(o.eps);
    meta.grid = Some([l.cfg.grid.n1, l.cfg.grid.n2]);
    let rows: Vec<io::DiagnosticRow> = o.run.diagnostics.iter().map(Into::into).collect();
    io::write_table(&out.join(format!("diagnostics_eps{tag}.csv")), &rows, &meta)?;
    Ok(())
}

fn eps_list(cfg: &ExperimentConfig) -> HResult<&[f64]> {
    if cfg.run.eps.is_empty() {
        Err(HarnessError::Config("run.eps: at least one value required".into()))
    } else {
        Ok(&cfg.run.eps)
    }
}

pub fn cmd_simulate_pde(l: &Loaded, out: &Path) -> HResult<Vec<PdeOutcome>> {
    require_torus(&l.cfg)?;
    let horizon = pde_horizon(&l.cfg)?;
    let outs: Vec<PdeOutcome> =
        eps_list(&l.cfg)?.par_iter().map(|&e| run_pde(&l.cfg, e, horizon)).collect::<HResult<_>>()?;
    for o in &outs {
        write_pde(l, out, o)?;
    }
    Ok(outs)
}

// ---------------------------------------------------------------- compare

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub eps: f64,
    /// sup over frames in the window of Σ_j dist(PDE a_j, ODE a_j)
    pub deviation: f64,
    /// sup over the window of |ℙj(u_ε) − ξ_ODE|
    pub xi_deviation: f64,
    pub t_star_pde: Option<f64>,
    pub window: f64,
    pub frames: usize,
    pub energy_balance_residual: f64,
    pub max_modulus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema: String,
    pub config_hash: String,
    pub version: String,
    pub surface: Surface,
    pub grid: [usize; 2],
    pub t_star_ode: Option<f64>,
    pub ode_energy_balance_residual: f64,
    pub rows: Vec<CompareRow>,
    /// D(ε) strictly decreasing as ε decreases; None for a single ε.
    pub monotone: Option<bool>,
}

pub const COMPARE_SCHEMA: &str = "vortexflow.compare/1";

fn lerp_xi(tr: &Trajectory, t: f64) -> Option<Vec<f64>> {
    let k = tr.times.partition_point(|&x| x <= t);
    if k == 0 || tr.xis[0].xi.is_empty() {
        return None;
    }
    if k >= tr.times.len() {
        return (t <= tr.end_time() + 1e-12).then(|| tr.xis[k - 1].xi.clone());
    }
    let f = (t - tr.times[k - 1]) / (tr.times[k] - tr.times[k - 1]);
    Some(tr.xis[k - 1].xi.iter().zip(&tr.xis[k].xi).map(|(a, b)| a + f * (b - a)).collect())
}

/// ODE vortex index for each PDE track: same charge, nearest initial position.
fn match_tracks(s: &Surface, tracks: &TrackSet, c0: &VortexConfig) -> HResult<Vec<usize>> {
    let mut used = vec![false; c0.len()];
    let mut out = vec![];
    for tr in &tracks.tracks {
        let best = (0..c0.len())
            .filter(|&j| !used[j] && c0.d[j] == tr.charge)
            .min_by(|&a, &b| {
                let da = geodesic_distance(s, c0.a[a], tr.positions[0]);
                let db = geodesic_distance(s, c0.a[b], tr.positions[0]);
                da.total_cmp(&db)
            })
            .ok_or_else(|| HarnessError::Invariant(format!("PDE track of charge {} has no ODE partner", tr.charge)))?;
        used[best] = true;
        out.push(best);
    }
    Ok(out)
}

/// `window` is the common comparison window: the horizon cut at the ODE collision time
/// and at the earliest PDE collision time over the whole ε ladder.
const COMPARE_SAMPLES: usize = 200;

pub fn compare_row(cfg: &ExperimentConfig, ode: &Trajectory, pde: &PdeOutcome, window: f64) -> HResult<CompareRow> {
    let s = cfg.surface;
    let c0 = cfg.config_vortices();
    if pde.tracks.tracks.len() != c0.len() {
        return Err(HarnessError::Invariant(format!(
            "ε = {}: {} tracks for {} vortices",
            pde.eps,
            pde.tracks.tracks.len(),
            c0.len()
        )));
    }
    let partner = match_tracks(&s, &pde.tracks, &c0)?;
    // Common times for every ε: a uniform grid on [0, window], PDE tracks interpolated.
    let last = pde.tracks.tracks.iter().filter_map(|tr| tr.times.last().copied()).fold(f64::INFINITY, f64::min);
    let times: Vec<f64> = (0..=COMPARE_SAMPLES)
        .map(|k| window * k as f64 / COMPARE_SAMPLES as f64)
        .filter(|&t| t <= last + 1e-12)
        .collect();
    let mut dev: f64 = 0.0;
    for &t in &times {
        let mut sum = 0.0;
        for (tr, &j) in pde.tracks.tracks.iter().zip(&partner) {
            let p = crate::tracker::interpolate(&tr.times, &tr.positions, t, &s).ok_or_else(|| HarnessError::Invariant(format!("track ends before t = {t}")))?;
            let q = ode.position(j, t).ok_or_else(|| HarnessError::Invariant(format!("ODE ends before t = {t}")))?;
            sum += geodesic_distance(&s, p, q);
        }
        dev = dev.max(sum);
    }
    let mut xi_dev: f64 = 0.0;
    for d in pde.run.diagnostics.iter().filter(|d| d.t <= window + 1e-12) {
        if let Some(x) = lerp_xi(ode, d.t) {
            let e = x.iter().zip(&d.xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            xi_dev = xi_dev.max(e);
        }
    }
    Ok(CompareRow {
        eps: pde.eps,
        deviation: dev,
        xi_deviation: xi_dev,
        t_star_pde: pde.tracks.t_star,
        window,
        frames: times.len(),
        energy_balance_residual: pde.run.balance_residual(),
        max_modulus: pde.run.max_modulus,
    })
}

pub fn compare(l: &Loaded) -> HResult<(CompareReport, Trajectory, Vec<PdeOutcome>)> {
    let cfg = &l.cfg;
    require_torus(cfg)?;
    let ode = run_ode(cfg)?;
    let horizon = match cfg.run.horizon {
        Some(h) => h,
        None => ode.t_star.map(|t| 0.5 * t).unwrap_or(cfg.run.ode_horizon),
    };
    let pdes: Vec<PdeOutcome> = eps_list(cfg)?.par_iter().map(|&e| run_pde(cfg, e, horizon)).collect::<HResult<_>>()?;
    let window = pdes
        .iter()
        .filter_map(|p| p.tracks.t_star)
        .chain(ode.t_star)
        .fold(horizon, f64::min);
    let rows = pdes.iter().map(|p| compare_row(cfg, &ode, p, window)).collect::<HResult<Vec<_>>>()?;
    let monotone = (rows.len() > 1).then(|| rows.windows(2).all(|w| w[1].deviation < w[0].deviation));
    let report = CompareReport {
        schema: COMPARE_SCHEMA.into(),
        config_hash: l.hash.clone(),
        version: crate::VERSION.into(),
        surface: cfg.surface,
        grid: [cfg.grid.n1, cfg.grid.n2],
        t_star_ode: ode.t_star,
        ode_energy_balance_residual: if ode.times.len() > 1 { ode.energy_balance_residual() } else { 0.0 },
        rows,
        monotone,
    };
    Ok((report, ode, pdes))
}

pub fn cmd_compare(l: &Loaded, out: &Path) -> HResult<CompareReport> {
    let (report, ode, pdes) = compare(l)?;
    let mut meta = l.sidecar("trajectory", &io::TRAJECTORY_COLUMNS);
    meta.t_star = ode.t_star;
    meta.provenance = Some("ode".into());
    io::write_table(&out.join("trajectory_ode.csv"), &io::ode_rows(&ode), &meta)?;
    for p in &pdes {
        write_pde(l, out, p)?;
    }
    let json = serde_json::to_vec_pretty(&report).map_err(|e| HarnessError::Io(e.to_string()))?;
    io::atomic_write(&out.join("compare.json"), &json)?;
    Ok(report)
}

// ---------------------------------------------------------------- static tables

pub fn expansion_rows(cfg: &ExperimentConfig) -> HResult<Vec<ExpansionRow>> {
    let c = cfg.config_vortices();
    Ok(energy_expansion(&c, &cfg.initial_xi()?, eps_list(cfg)?, &cfg.grid())?)
}

pub fn cmd_energy_expansion(l: &Loaded, out: &Path) -> HResult<Vec<ExpansionRow>> {
    let rows = expansion_rows(&l.cfg)?;
    let mut meta = l.sidecar("energy-expansion", &io::EXPANSION_COLUMNS);
    meta.grid = Some([l.cfg.grid.n1, l.cfg.grid.n2]);
    let csv: Vec<io::ExpansionCsvRow> = rows.iter().map(Into::into).collect();
    io::write_table(&out.join("energy_expansion.csv"), &csv, &meta)?;
    Ok(rows)
}

fn random_point(s: &Surface, rng: &mut ChaCha8Rng) -> ChartPoint {
    match *s {
        Surface::FlatTorus { l1, l2 } => ChartPoint::new(rng.gen_range(0.0..l1), rng.gen_range(0.0..l2)),
        Surface::Sphere { .. } => {
            let z: f64 = rng.gen_range(-0.95..0.95);
            ChartPoint::new(z.acos(), rng.gen_range(0.0..std::f64::consts::TAU))
        }
    }
}

/// Seeded random pairs (x, y) with G, |∇_x G| and H (H left empty outside its domain).
pub fn green_rows(cfg: &ExperimentConfig) -> HResult<Vec<io::GreenRow>> {
    let s = cfg.surface;
    let gf = GreenFunction::new(&s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.green.rows);
    while rows.len() < cfg.green.rows {
        let (x, y) = (random_point(&s, &mut rng), random_point(&s, &mut rng));
        if geodesic_distance(&s, x, y) < 1e-3 * s.scale() {
            continue;
        }
        rows.push(io::GreenRow {
            x1: x.x1,
            x2: x.x2,
            y1: y.x1,
            y2: y.x2,
            g: gf.value(x, y)?,
            grad_norm: gf.grad_x(x, y)?.norm(),
            h: gf.regular_part(x, y).ok(),
        });
    }
    Ok(rows)
}

pub fn cmd_green_table(l: &Loaded, out: &Path) -> HResult<Vec<io::GreenRow>> {
    let rows = green_rows(&l.cfg)?;
    io::write_table(&out.join("green_table.csv"), &rows, &l.sidecar("green-table", &io::GREEN_COLUMNS))?;
    Ok(rows)
}

// ---------------------------------------------------------------- selftest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, f: impl FnOnce() -> Result<(bool, String), Error>) -> Check {
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, e.to_string()),
    };
    Check { name: name.into(), passed, detail }
}

/// A fast pass over the module invariants (coarse grids, a few configurations).
pub fn selftest() -> Vec<Check> {
    let torus = Surface::FlatTorus { l1: 1.0, l2: 1.0 };
    let sphere = Surface::Sphere { radius: 1.0 };
    let mut out = vec![];
    out.push(check("green symmetry and eigen-sum oracle", || {
        let mut worst: f64 = 0.0;
        for s in [torus, sphere] {
            let gf = GreenFunction::new(&s)?;
            let (x, y) = match s {
                Surface::FlatTorus { .. } => (ChartPoint::new(0.1, 0.2), ChartPoint::new(0.6, 0.45)),
                Surface::Sphere { .. } => (ChartPoint::new(0.7, 0.3), ChartPoint::new(2.1, 2.0)),
            };
            let (a, b) = (gf.value(x, y)?, gf.value(y, x)?);
            if a != b {
                return Ok((false, format!("asymmetric: {a} vs {b}")));
            }
            let o = eigen_sum_oracle(&s, x, y, 4000);
            worst = worst.max(((a - o.value) / a).abs());
        }
        Ok((worst < 1e-5, format!("max rel err {worst:.2e}")))
    }));
    out.push(check("Poincaré–Hopf on canonical fields", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [torus, sphere] {
            let g = if s.is_torus() { GridSpec::new(s, 64, 64)? } else { GridSpec::new(s, 48, 96)? };
            for _ in 0..3 {
                let c = if s.is_torus() {
                    VortexConfig::new((0..4).map(|_| random_point(&s, &mut rng)).collect(), vec![1, -1, 1, -1])
                } else {
                    VortexConfig::new((0..2).map(|_| random_point(&s, &mut rng)).collect(), vec![1, 1])
                };
                if c.min_separation(&s) < 0.1 {
                    continue;
                }
                let xi = nearest_lattice_xi(&c, &s, &HarmonicCoeffs::zeros(&s))?;
                let q = vorticity_field(&reconstruct_canonical(&c, &xi, &g)?).total_charge();
                if q != s.euler_characteristic() {
                    return Ok((false, format!("{s:?}: total charge {q}")));
                }
            }
        }
        Ok((true, "charge = χ".into()))
    }));
    out.push(check("constrained gradient vs finite differences", || {
        let c = VortexConfig::new(vec![ChartPoint::new(0.2, 0.3), ChartPoint::new(0.65, 0.7)], vec![1, -1]);
        let xi = nearest_lattice_xi(&c, &torus, &HarmonicCoeffs::zeros(&torus))?;
        let w = Renormalized::new(&torus)?;
        let g = w.gradient(&c, &xi)?;
        let h = 1e-5;
        let shifted = |t: f64| -> Result<f64, Error> {
            let mut c1 = c.clone();
            c1.a[0] = crate::geometry::exp_map(&torus, &TangentVec::new(c.a[0], [t, 0.0]));
            let xi1 = crate::renorm::xi_continuation(&torus, &c, &xi, &c1)?;
            w.value(&c1, &xi1, true)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let rel = ((fd - g[0].v[0]) / g[0].v[0]).abs();
        Ok((rel < 1e-5, format!("rel err {rel:.2e}")))
    }));
    out.push(check("lattice holonomy", || {
        let g = GridSpec::new(torus, 64, 64)?;
        let c = VortexConfig::new(vec![ChartPoint::new(0.3, 0.52), ChartPoint::new(0.7, 0.52)], vec![1, -1]);
        let xi = nearest_lattice_xi(&c, &torus, &HarmonicCoeffs::zeros(&torus))?;
        let good = reconstruct_canonical_audit(&c, &xi, &g)?.holonomy;
        let half = HarmonicCoeffs::new(vec![xi.xi[0] + PI, xi.xi[1]]);
        let bad = reconstruct_canonical_audit(&c, &half, &g)?.holonomy;
        let r = bad.generators[0].abs();
        Ok((good.is_single_valued(1e-6) && (r - PI).abs() < 0.05, format!("shifted residue {r:.4}")))
    }));
    out.push(check("flow max principle and energy decay", || {
        let g = GridSpec::new(torus, 48, 48)?;
        let c = VortexConfig::new(vec![ChartPoint::new(0.3, 0.52), ChartPoint::new(0.7, 0.52)], vec![1, -1]);
        let xi = nearest_lattice_xi(&c, &torus, &HarmonicCoeffs::zeros(&torus))?;
        let eps = 0.1;
        let f = GlFlow::new(&g, eps, None)?;
        let r = f.run(well_prepared_initial(&c, &xi, eps, &g)?, 100.0 * f.dt(), 10, |_| Ok(()))?;
        let e0 = gl_energy(&well_prepared_initial(&c, &xi, eps, &g)?, eps)?.total;
        let ok = r.max_modulus <= 1.0 + 1e-12 && r.last.monotone_violations == 0 && r.last.energy < e0;
        Ok((ok, format!("max|w| = {:.15}, balance {:.2e}", r.max_modulus, r.balance_residual())))
    }));
    out.push(check("antipodal sphere pair is stationary", || {
        let p = ChartPoint::new(1.0, 0.5);
        let c = VortexConfig::new(vec![p, antipode(&sphere, p)], vec![1, 1]);
        let tr = LimitFlow::new(&sphere)?.integrate(&OdeState::new(&sphere, c.clone(), HarmonicCoeffs::empty())?, 1.0, 0.05)?;
        let last = tr.configs.last().expect("nonempty");
        let drift = c.a.iter().zip(&last.a).map(|(a, b)| geodesic_distance(&sphere, *a, *b)).fold(0.0, f64::max);
        Ok((drift < 1e-8, format!("drift {drift:.2e}")))
    }));
    out.push(check("limit-flow energy balance", || {
        let c = VortexConfig::new(vec![ChartPoint::new(0.3, 0.5), ChartPoint::new(0.7, 0.5)], vec![1, -1]);
        let xi = nearest_lattice_xi(&c, &torus, &HarmonicCoeffs::zeros(&torus))?;
        let tr = LimitFlow::new(&torus)?.integrate(&OdeState::new(&torus, c, xi)?, 1.0, 1e-4)?;
        let r = tr.energy_balance_residual();
        Ok((r < 0.01 && tr.t_star.is_some(), format!("residual {r:.2e}, T* = {:?}", tr.t_star)))
    }));
    out
}

pub fn cmd_selftest() -> HResult<Vec<Check>> {
    let checks = selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    match checks.iter().find(|c| !c.passed) {
        Some(c) => Err(HarnessError::Invariant(c.name.clone())),
        None => Ok(checks),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SimulatePde,
    SimulateOde,
    Compare,
    EnergyExpansion,
    GreenTable,
    Selftest,
}

/// Runs a subcommand and maps the outcome to the process exit code.
pub fn dispatch(cmd: Command, config: Option<&Path>, out: Option<&Path>) -> i32 {
    let result = (|| -> HResult<()> {
        if cmd == Command::Selftest {
            return cmd_selftest().map(|_| ());
        }
        let path = config.ok_or_else(|| HarnessError::Config("--config is required".into()))?;
        let l = Loaded::from_path(path)?;
        let out: PathBuf = out.map(Path::to_path_buf).or_else(|| l.cfg.output.clone()).unwrap_or_else(|| "out".into());
        match cmd {
            Command::SimulatePde => {
                for o in cmd_simulate_pde(&l, &out)? {
                    println!("eps = {}: {} tracks, T* = {:?}", o.eps, o.tracks.tracks.len(), o.tracks.t_star);
                }
            }
            Command::SimulateOde => {
                let tr = cmd_simulate_ode(&l, &out)?;
                println!("T* = {:?}", tr.t_star);
            }
            Command::Compare => {
                let r = cmd_compare(&l, &out)?;
                for row in &r.rows {
                    println!("eps = {}: D = {:.4e}, |Pj - xi| = {:.3e}", row.eps, row.deviation, row.xi_deviation);
                }
            }
            Command::EnergyExpansion => {
                for r in cmd_energy_expansion(&l, &out)? {
                    println!("eps = {}: R = {:.6}", r.eps, r.r);
                }
            }
            Command::GreenTable => {
                cmd_green_table(&l, &out)?;
            }
            Command::Selftest => unreachable!(),
        }
        Ok(())
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
