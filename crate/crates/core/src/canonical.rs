//! Ψ(a, d), canonical harmonic fields u* and well-prepared data u⁰_ε.
//!
//! The phase of u* is written in closed form. On the torus (τ = iL₂/L₁)
//!
//!   Φ = Σ d_j arg θ₁(π(z − a_j)/L₁ | τ) + (ξ₁ − 2πS/V) x + ξ₂ y,   S = Σ d_j a_j,y,
//!
//! and on the sphere, with ζ = tan(θ/2) e^{iφ},
//!
//!   Φ = Σ d_j arg(ζ − ζ_j) − φ.
//!
//! Both have dΦ = −⋆dψ + ξ + 𝒜 away from the a_j. Edge increments of Φ are integrated
//! along a comb spanning tree; the plaquette and generator residues of the closing
//! edges decide whether the phase is single valued (ξ ∈ L(a, d)).

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gl_energy, pairwise_sum, GridSpec, TangentField};
use crate::geometry::{geodesic_distance, wrap_angle, ChartPoint, Surface};
use crate::green::GreenFunction;
use crate::renorm::{check_admissible, HarmonicCoeffs, Renormalized, VortexConfig};
use crate::spectral::Fft2;

/// Holonomy residues above this are lattice violations.
pub const RESIDUE_TOL: f64 = 1e-6;

/// ψ = ⋆Ψ on the grid nodes, zero mean.
#[derive(Clone, Debug)]
pub struct PsiGrid {
    pub grid: GridSpec,
    pub psi: Vec<f64>,
}

impl PsiGrid {
    pub fn mean(&self) -> f64 {
        let g = &self.grid;
        let num: Vec<f64> = (0..g.len()).map(|k| self.psi[k] * g.node_area(k / g.n2)).collect();
        pairwise_sum(&num) / g.surface.volume()
    }
}

/// Moves a vortex sitting exactly on a node by `shift` in both chart directions.
fn nudge_off_nodes(c: &VortexConfig, grid: &GridSpec, shift: f64) -> VortexConfig {
    let mut out = c.clone();
    for (j, p) in out.a.iter_mut().enumerate() {
        let (f1, f2) = grid.locate(*p);
        if (f1 - f1.round()).abs() < 1e-9 && (f2 - f2.round()).abs() < 1e-9 {
            log::warn!("vortex {j} lies on a grid node, nudged by {shift:e}");
            let (h1, h2) = grid.spacing();
            *p = ChartPoint::new(p.x1 + shift * h1, p.x2 + shift * h2);
        }
    }
    out
}

/// Zero-mean solution of −Δψ = 2π Σ d_j δ_{a_j} − κ. Torus: spectral solve with each
/// delta mollified by a Gaussian of width 2h, applied through its exact transform, so
/// ψ equals the Green superposition up to a constant outside a few h of the cores.
/// Sphere: Green superposition at the nodes.
pub fn solve_psi(c: &VortexConfig, grid: &GridSpec) -> Result<PsiGrid> {
    check_admissible(c, &grid.surface)?;
    let g = *grid;
    let mut psi = match g.surface {
        Surface::FlatTorus { l1, l2 } => {
            let sigma = 2.0 * g.max_edge();
            let wave = |k: usize, n: usize, l: f64| {
                let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                TAU * k / l
            };
            let k1: Vec<f64> = (0..g.n1).map(|k| wave(k, g.n1, l1)).collect();
            let k2: Vec<f64> = (0..g.n2).map(|k| wave(k, g.n2, l2)).collect();
            let scale = (g.n1 * g.n2) as f64 / (l1 * l2);
            let mut rhs = vec![Complex64::default(); g.len()];
            for (p, &d) in c.a.iter().zip(&c.d) {
                let e1: Vec<Complex64> = k1.iter().map(|k| Complex64::from_polar(1.0, -k * p.x1)).collect();
                let e2: Vec<Complex64> = k2.iter().map(|k| Complex64::from_polar(1.0, -k * p.x2)).collect();
                let m = TAU * d as f64 * scale;
                for a in 0..g.n1 {
                    for b in 0..g.n2 {
                        rhs[g.idx(a, b)] += m * e1[a] * e2[b];
                    }
                }
            }
            rhs[0] = Complex64::default();
            for a in 0..g.n1 {
                for b in 0..g.n2 {
                    let kk = k1[a] * k1[a] + k2[b] * k2[b];
                    if kk > 0.0 {
                        rhs[g.idx(a, b)] *= (-0.5 * sigma * sigma * kk).exp() / kk;
                    }
                }
            }
            Fft2::new(g.n1, g.n2).inverse(&mut rhs);
            rhs.iter().map(|z| z.re).collect::<Vec<f64>>()
        }
        Surface::Sphere { .. } => {
            let gf = GreenFunction::new(&g.surface)?;
            let mut out = vec![0.0; g.len()];
            for i in 0..g.n1 {
                for jj in 0..g.n2 {
                    let x = g.node(i, jj);
                    let mut v = 0.0;
                    for (p, &d) in c.a.iter().zip(&c.d) {
                        v += TAU * d as f64 * gf.value(x, *p)?;
                    }
                    out[g.idx(i, jj)] = v;
                }
            }
            out
        }
    };
    let mut out = PsiGrid { grid: g, psi: vec![] };
    out.psi = std::mem::take(&mut psi);
    let m = out.mean();
    out.psi.iter_mut().for_each(|v| *v -= m);
    Ok(out)
}

/// θ₁(u | τ) up to a positive factor, τ = i·tau_im; only its argument is meaningful.
pub fn theta1_scaled(u: Complex64, tau_im: f64) -> Complex64 {
    let lq = -PI * tau_im;
    let (x, y) = (u.re, u.im);
    let expo = |n: usize| {
        let a = lq * (n as f64 + 0.5).powi(2);
        let m = (2 * n + 1) as f64;
        (a - m * y, a + m * y)
    };
    let mut top = f64::NEG_INFINITY;
    let mut nmax = 0;
    for n in 0..200 {
        let (r1, r2) = expo(n);
        let r = r1.max(r2);
        if r > top {
            top = r;
        }
        nmax = n;
        if r < top - 45.0 {
            break;
        }
    }
    let mut sum = Complex64::default();
    for n in 0..=nmax {
        let (r1, r2) = expo(n);
        let m = (2 * n + 1) as f64;
        // 2 sin(m u) = −i (e^{imu} − e^{−imu})
        let t = Complex64::from_polar((r1 - top).exp(), m * x) - Complex64::from_polar((r2 - top).exp(), -m * x);
        let t = Complex64::new(t.im, -t.re);
        sum += if n % 2 == 0 { t } else { -t };
    }
    sum
}

/// Residues of the closing edges of the spanning tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holonomy {
    /// wrap(∮_{γ_k} dθ) for the generator loops; empty on the sphere.
    pub generators: Vec<f64>,
    /// max over plaquettes of the distance of the plaquette sum to 2πℤ.
    pub max_plaquette: f64,
}

impl Holonomy {
    pub fn is_single_valued(&self, tol: f64) -> bool {
        self.max_plaquette < tol && self.generators.iter().all(|r| r.abs() < tol)
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub field: TangentField,
    pub holonomy: Holonomy,
}

/// Edge increments of Φ: (direction 1, direction 2), edge (i, j) → successor.
fn phase_edges(c: &VortexConfig, xi: &HarmonicCoeffs, g: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let (n1, n2) = (g.n1, g.n2);
    let (h1, h2) = g.spacing();
    let mut d1 = vec![0.0; g.len()];
    let mut d2 = vec![0.0; g.len()];
    match g.surface {
        Surface::FlatTorus { l1, l2 } => {
            let s: f64 = c.a.iter().zip(&c.d).map(|(p, &d)| d as f64 * g.surface.reduce(*p).x2).sum();
            let lin1 = (xi.xi[0] - TAU * s / (l1 * l2)) * h1;
            let lin2 = xi.xi[1] * h2;
            d1.iter_mut().for_each(|v| *v = lin1);
            d2.iter_mut().for_each(|v| *v = lin2);
            // arg θ₁ on the closed (n1+1)×(n2+1) node lattice, unreduced coordinates
            let m2 = n2 + 1;
            let mut ang = vec![0.0; (n1 + 1) * m2];
            for (p, &d) in c.a.iter().zip(&c.d) {
                let a = g.surface.reduce(*p);
                for i in 0..=n1 {
                    for j in 0..=n2 {
                        let u = Complex64::new(i as f64 * h1 - a.x1, j as f64 * h2 - a.x2) * (PI / l1);
                        ang[i * m2 + j] = theta1_scaled(u, l2 / l1).arg();
                    }
                }
                let df = d as f64;
                for i in 0..n1 {
                    for j in 0..n2 {
                        let k = g.idx(i, j);
                        d1[k] += df * wrap_angle(ang[(i + 1) * m2 + j] - ang[i * m2 + j]);
                        d2[k] += df * wrap_angle(ang[i * m2 + j + 1] - ang[i * m2 + j]);
                    }
                }
            }
        }
        Surface::Sphere { .. } => {
            let stereo = |p: ChartPoint| Complex64::from_polar((0.5 * p.x1).tan(), p.x2);
            for k in 0..g.len() {
                d2[k] = -h2;
            }
            let mut ang = vec![0.0; g.len()];
            for (p, &d) in c.a.iter().zip(&c.d) {
                let zj = stereo(*p);
                for i in 0..n1 {
                    for j in 0..n2 {
                        ang[g.idx(i, j)] = (stereo(g.node(i, j)) - zj).arg();
                    }
                }
                let df = d as f64;
                for i in 0..n1 {
                    for j in 0..n2 {
                        let k = g.idx(i, j);
                        if i + 1 < n1 {
                            d1[k] += df * wrap_angle(ang[g.idx(i + 1, j)] - ang[k]);
                        }
                        d2[k] += df * wrap_angle(ang[g.idx(i, g.next2(j))] - ang[k]);
                    }
                }
            }
        }
    }
    (d1, d2)
}

/// Builds u* = e^{iθ} by integrating the phase increments along the comb tree
/// (column i = 0 in direction 2, then every row in direction 1) and audits the
/// closing edges. Never fails on holonomy; see `reconstruct_canonical`.
pub fn reconstruct_canonical_audit(c: &VortexConfig, xi: &HarmonicCoeffs, grid: &GridSpec) -> Result<Reconstruction> {
    check_admissible(c, &grid.surface)?;
    if xi.xi.len() != grid.surface.harmonic_dim() {
        return Err(Error::HarmonicLength { expected: grid.surface.harmonic_dim(), found: xi.xi.len() });
    }
    let c = nudge_off_nodes(c, grid, 1e-7);
    let g = *grid;
    let (d1, d2) = phase_edges(&c, xi, &g);
    let mut theta = vec![0.0; g.len()];
    for j in 1..g.n2 {
        theta[g.idx(0, j)] = theta[g.idx(0, j - 1)] + d2[g.idx(0, j - 1)];
    }
    for i in 1..g.n1 {
        for j in 0..g.n2 {
            theta[g.idx(i, j)] = theta[g.idx(i - 1, j)] + d1[g.idx(i - 1, j)];
        }
    }
    let mut max_plaquette: f64 = 0.0;
    for i in 0..g.cell_rows() {
        let ip = g.next1(i);
        for j in 0..g.n2 {
            let jp = g.next2(j);
            let s = d1[g.idx(i, j)] + d2[g.idx(ip, j)] - d1[g.idx(i, jp)] - d2[g.idx(i, j)];
            max_plaquette = max_plaquette.max((s - TAU * (s / TAU).round()).abs());
        }
    }
    let generators = if g.surface.is_torus() {
        let r1: Vec<f64> = (0..g.n1).map(|i| d1[g.idx(i, 0)]).collect();
        let r2: Vec<f64> = (0..g.n2).map(|j| d2[g.idx(0, j)]).collect();
        vec![wrap_angle(pairwise_sum(&r1)), wrap_angle(pairwise_sum(&r2))]
    } else {
        vec![]
    };
    let field = TangentField { grid: g, w: theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect() };
    Ok(Reconstruction { field, holonomy: Holonomy { generators, max_plaquette } })
}

/// Canonical harmonic field for (a, d, ξ); fails with the residues when ξ ∉ L(a, d).
pub fn reconstruct_canonical(c: &VortexConfig, xi: &HarmonicCoeffs, grid: &GridSpec) -> Result<TangentField> {
    let r = reconstruct_canonical_audit(c, xi, grid)?;
    if !r.holonomy.is_single_valued(RESIDUE_TOL) {
        let mut residues = r.holonomy.generators.clone();
        residues.push(r.holonomy.max_plaquette);
        return Err(Error::LatticeViolation { residues });
    }
    Ok(r.field)
}

/// u⁰_ε = Π_j tanh(dist(·, a_j)/ε) · u*.
pub fn well_prepared_initial(c: &VortexConfig, xi: &HarmonicCoeffs, eps: f64, grid: &GridSpec) -> Result<TangentField> {
    let h = grid.max_edge();
    if !(eps >= 2.0 * h) {
        return Err(Error::Resolution { eps, min: 2.0 * h });
    }
    let mut u = reconstruct_canonical(c, xi, grid)?;
    let g = *grid;
    for i in 0..g.n1 {
        for j in 0..g.n2 {
            let x = g.node(i, j);
            let f: f64 = c.a.iter().map(|p| (geodesic_distance(&g.surface, x, *p) / eps).tanh()).product();
            u.w[g.idx(i, j)] *= f;
        }
    }
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub eps: f64,
    pub f_eps: f64,
    /// πn|log ε|
    pub log_term: f64,
    pub w: f64,
    pub r: f64,
}

/// R(ε) = F_ε(u⁰_ε) − πn|log ε| − W(a, d, ξ) over a decreasing ε ladder.
pub fn energy_expansion(c: &VortexConfig, xi: &HarmonicCoeffs, eps: &[f64], grid: &GridSpec) -> Result<Vec<ExpansionRow>> {
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("ε list must be strictly decreasing".into()));
    }
    let w = Renormalized::new(&grid.surface)?.value(c, xi, true)?;
    let n = c.core_count() as f64;
    eps.iter()
        .map(|&e| {
            let u = well_prepared_initial(c, xi, e, grid)?;
            let f = gl_energy(&u, e)?.total;
            let log_term = PI * n * e.ln().abs();
            Ok(ExpansionRow { eps: e, f_eps: f, log_term, w, r: f - log_term - w })
        })
        .collect()
}
