//! Tangent fields on periodic grids and their first-order invariants: current,
//! vorticity, loop index, GL energy and harmonic projection.
//!
//! Torus nodes sit at (i h₁, j h₂). Sphere nodes are cell-centered in colatitude,
//! θ_i = (i + ½)h_θ, φ_j = j h_φ, so no node lies on a pole; the two polar caps are
//! closed analytically. Index layout is row-major, `i * n2 + j`.
//!
//! Edge quantities are stored integrated along the edge. The phase increment of an
//! edge p → q is Δ = arg(w̄_p w_q e^{−i∫𝒜}) ∈ (−π, π].

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gauss_curvature, min_image, ChartPoint, Surface};
use crate::renorm::HarmonicCoeffs;

pub const MIN_NODES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub surface: Surface,
    pub n1: usize,
    pub n2: usize,
}

impl GridSpec {
    pub fn new(surface: Surface, n1: usize, n2: usize) -> Result<Self> {
        surface.validate()?;
        if n1 < MIN_NODES || n2 < MIN_NODES {
            return Err(Error::InvalidGrid(format!("need at least {MIN_NODES} nodes per direction, got {n1}x{n2}")));
        }
        Ok(Self { surface, n1, n2 })
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n2 + j
    }

    /// Chart spacing: (h₁, h₂) on the torus, (h_θ, h_φ) on the sphere.
    pub fn spacing(&self) -> (f64, f64) {
        match self.surface {
            Surface::FlatTorus { l1, l2 } => (l1 / self.n1 as f64, l2 / self.n2 as f64),
            Surface::Sphere { .. } => (PI / self.n1 as f64, TAU / self.n2 as f64),
        }
    }

    /// Largest metric edge length.
    pub fn max_edge(&self) -> f64 {
        let (h1, h2) = self.spacing();
        match self.surface {
            Surface::FlatTorus { .. } => h1.max(h2),
            Surface::Sphere { radius } => radius * h1.max(h2),
        }
    }

    pub fn node(&self, i: usize, j: usize) -> ChartPoint {
        let (h1, h2) = self.spacing();
        match self.surface {
            Surface::FlatTorus { .. } => ChartPoint::new(i as f64 * h1, j as f64 * h2),
            Surface::Sphere { .. } => ChartPoint::new((i as f64 + 0.5) * h1, j as f64 * h2),
        }
    }

    pub fn periodic1(&self) -> bool {
        self.surface.is_torus()
    }

    /// Number of plaquette rows: n1 on the torus, n1 − 1 between sphere rings.
    pub fn cell_rows(&self) -> usize {
        if self.periodic1() {
            self.n1
        } else {
            self.n1 - 1
        }
    }

    #[inline]
    pub fn next1(&self, i: usize) -> usize {
        if i + 1 == self.n1 {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn next2(&self, j: usize) -> usize {
        if j + 1 == self.n2 {
            0
        } else {
            j + 1
        }
    }

    /// Area represented by node (i, j); sums exactly to the surface area.
    pub fn node_area(&self, i: usize) -> f64 {
        let (h1, h2) = self.spacing();
        match self.surface {
            Surface::FlatTorus { .. } => h1 * h2,
            Surface::Sphere { radius } => {
                let lo = if i == 0 { 0.0 } else { i as f64 * h1 };
                let hi = if i + 1 == self.n1 { PI } else { (i + 1) as f64 * h1 };
                radius * radius * h2 * (lo.cos() - hi.cos())
            }
        }
    }

    /// Area of plaquette row i (torus cell i, or the band between rings i and i+1).
    pub fn cell_area(&self, i: usize) -> f64 {
        let (h1, h2) = self.spacing();
        match self.surface {
            Surface::FlatTorus { .. } => h1 * h2,
            Surface::Sphere { radius } => {
                let t0 = (i as f64 + 0.5) * h1;
                radius * radius * h2 * (t0.cos() - (t0 + h1).cos())
            }
        }
    }

    /// ∫𝒜 along the direction-2 edge (i, j) → (i, j+1); direction-1 edges carry none.
    pub fn connection2(&self, i: usize) -> f64 {
        match self.surface {
            Surface::FlatTorus { .. } => 0.0,
            Surface::Sphere { .. } => {
                let (h1, h2) = self.spacing();
                -((i as f64 + 0.5) * h1).cos() * h2
            }
        }
    }

    /// Metric lengths of direction-1 and direction-2 edges leaving row i.
    pub fn edge_lengths(&self, i: usize) -> (f64, f64) {
        let (h1, h2) = self.spacing();
        match self.surface {
            Surface::FlatTorus { .. } => (h1, h2),
            Surface::Sphere { radius } => (radius * h1, radius * ((i as f64 + 0.5) * h1).sin() * h2),
        }
    }

    /// Fractional node coordinates of a chart point.
    pub fn locate(&self, p: ChartPoint) -> (f64, f64) {
        let (h1, h2) = self.spacing();
        let p = self.surface.reduce(p);
        match self.surface {
            Surface::FlatTorus { .. } => (p.x1 / h1, p.x2 / h2),
            Surface::Sphere { .. } => (p.x1 / h1 - 0.5, p.x2 / h2),
        }
    }

    /// Chart displacement from node (i, j) to p, minimal image in periodic directions.
    pub fn chart_offset(&self, i: usize, j: usize, p: ChartPoint) -> [f64; 2] {
        let n = self.node(i, j);
        match self.surface {
            Surface::FlatTorus { l1, l2 } => [min_image(p.x1 - n.x1, l1), min_image(p.x2 - n.x2, l2)],
            Surface::Sphere { .. } => [p.x1 - n.x1, min_image(p.x2 - n.x2, TAU)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    pub grid: GridSpec,
    pub w: Vec<Complex64>,
}

impl TangentField {
    pub fn constant(grid: GridSpec, value: Complex64) -> Self {
        Self { grid, w: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(ChartPoint) -> Complex64) -> Self {
        let mut w = Vec::with_capacity(grid.len());
        for i in 0..grid.n1 {
            for j in 0..grid.n2 {
                w.push(f(grid.node(i, j)));
            }
        }
        Self { grid, w }
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.w[self.grid.idx(i, j)]
    }

    pub fn max_modulus(&self) -> f64 {
        self.w.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Edge-integrated 1-form. `e1[idx(i,j)]` lives on (i,j) → (i+1,j) (rows i < cell_rows),
/// `e2[idx(i,j)]` on (i,j) → (i,j+1).
#[derive(Clone, Debug, PartialEq)]
pub struct OneFormGrid {
    pub grid: GridSpec,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

impl OneFormGrid {
    /// Sample ξ₁dx¹ + ξ₂dx² exactly on the edges.
    pub fn constant(grid: GridSpec, xi: [f64; 2]) -> Self {
        let (h1, h2) = grid.spacing();
        let rows = grid.cell_rows();
        let mut e1 = vec![0.0; grid.len()];
        for v in e1.iter_mut().take(rows * grid.n2) {
            *v = xi[0] * h1;
        }
        Self { grid, e1, e2: vec![xi[1] * h2; grid.len()] }
    }

    /// d f for a node function f.
    pub fn exact(grid: GridSpec, f: &[f64]) -> Self {
        let mut e1 = vec![0.0; grid.len()];
        let mut e2 = vec![0.0; grid.len()];
        for i in 0..grid.n1 {
            for j in 0..grid.n2 {
                let k = grid.idx(i, j);
                if i < grid.cell_rows() {
                    e1[k] = f[grid.idx(grid.next1(i), j)] - f[k];
                }
                e2[k] = f[grid.idx(i, grid.next2(j))] - f[k];
            }
        }
        Self { grid, e1, e2 }
    }
}

#[inline]
fn increment(wp: Complex64, wq: Complex64, a: f64) -> f64 {
    (wp.conj() * wq * Complex64::from_polar(1.0, -a)).arg()
}

/// Gauge-covariant wrapped phase increments on every edge.
pub fn phase_increments(u: &TangentField) -> (Vec<f64>, Vec<f64>) {
    let g = &u.grid;
    let mut d1 = vec![0.0; g.len()];
    let mut d2 = vec![0.0; g.len()];
    for i in 0..g.n1 {
        let a2 = g.connection2(i);
        for j in 0..g.n2 {
            let k = g.idx(i, j);
            if i < g.cell_rows() {
                d1[k] = increment(u.w[k], u.w[g.idx(g.next1(i), j)], 0.0);
            }
            d2[k] = increment(u.w[k], u.w[g.idx(i, g.next2(j))], a2);
        }
    }
    (d1, d2)
}

/// Discrete j(u): |w_p||w_q|·Δ on each edge, so that j(ρu) = ρ² j(u) and plane waves
/// are reproduced exactly.
pub fn current_j(u: &TangentField) -> OneFormGrid {
    let g = &u.grid;
    let (mut d1, mut d2) = phase_increments(u);
    for i in 0..g.n1 {
        for j in 0..g.n2 {
            let k = g.idx(i, j);
            let m = u.w[k].norm();
            if i < g.cell_rows() {
                d1[k] *= m * u.w[g.idx(g.next1(i), j)].norm();
            }
            d2[k] *= m * u.w[g.idx(i, g.next2(j))].norm();
        }
    }
    OneFormGrid { grid: *g, e1: d1, e2: d2 }
}

/// Plaquette vorticity Σ Δ + κ·area. Since the κ-area equals the circulation of 𝒜
/// exactly, every value is 2π times an integer up to rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct Vorticity {
    pub grid: GridSpec,
    /// cell_rows × n2 plaquette values.
    pub cells: Vec<f64>,
    /// Sphere polar caps (north, south); zero on the torus.
    pub caps: [f64; 2],
}

impl Vorticity {
    pub fn winding(&self, k: usize) -> i32 {
        (self.cells[k] / TAU).round() as i32
    }

    pub fn cap_windings(&self) -> [i32; 2] {
        [(self.caps[0] / TAU).round() as i32, (self.caps[1] / TAU).round() as i32]
    }

    pub fn total_charge(&self) -> i32 {
        let c = self.cap_windings();
        (0..self.cells.len()).map(|k| self.winding(k)).sum::<i32>() + c[0] + c[1]
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.cells) + self.caps[0] + self.caps[1]
    }
}

pub fn vorticity_field(u: &TangentField) -> Vorticity {
    let g = &u.grid;
    let (d1, d2) = phase_increments(u);
    let rows = g.cell_rows();
    let kappa = gauss_curvature(&g.surface, ChartPoint::new(PI / 2.0, 0.0));
    let mut cells = vec![0.0; rows * g.n2];
    for i in 0..rows {
        let ka = kappa * g.cell_area(i);
        let ip = g.next1(i);
        for j in 0..g.n2 {
            let jp = g.next2(j);
            let circ = d1[g.idx(i, j)] + d2[g.idx(ip, j)] - d1[g.idx(i, jp)] - d2[g.idx(i, j)];
            cells[g.idx(i, j)] = circ + ka;
        }
    }
    let mut caps = [0.0; 2];
    if let Surface::Sphere { .. } = g.surface {
        let (h1, _) = g.spacing();
        let ring = |i: usize| -> f64 { pairwise_sum(&d2[g.idx(i, 0)..g.idx(i, 0) + g.n2]) };
        let (t0, tl) = (0.5 * h1, PI - 0.5 * h1);
        caps[0] = ring(0) + TAU * (1.0 - t0.cos());
        caps[1] = -ring(g.n1 - 1) + TAU * (1.0 + tl.cos());
    }
    Vorticity { grid: *g, cells, caps }
}

/// Rectangle of plaquettes with lower corner node (i0, j0), spanning ni × nj cells.
/// Periodic directions wrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRect {
    pub i0: usize,
    pub j0: usize,
    pub ni: usize,
    pub nj: usize,
}

impl CellRect {
    /// Smallest rectangle of cells covering the metric box of half-width `radius` about p.
    /// On the sphere the box is clipped to the rings (the caps are never enclosed).
    pub fn around(grid: &GridSpec, p: ChartPoint, radius: f64) -> Self {
        let (f1, f2) = grid.locate(p);
        let (h1, h2) = grid.spacing();
        let (r1, r2) = match grid.surface {
            Surface::FlatTorus { .. } => (radius / h1, radius / h2),
            Surface::Sphere { radius: big_r } => {
                let s = grid.surface.reduce(p).x1.sin().max(1e-3);
                (radius / (big_r * h1), radius / (big_r * s * h2))
            }
        };
        let lo1 = (f1 - r1).floor() as i64;
        let hi1 = (f1 + r1).ceil() as i64;
        let lo2 = (f2 - r2).floor() as i64;
        let hi2 = (f2 + r2).ceil() as i64;
        let nj = ((hi2 - lo2) as usize).clamp(1, grid.n2 - 1);
        let j0 = lo2.rem_euclid(grid.n2 as i64) as usize;
        if grid.periodic1() {
            let ni = ((hi1 - lo1) as usize).clamp(1, grid.n1 - 1);
            CellRect { i0: lo1.rem_euclid(grid.n1 as i64) as usize, j0, ni, nj }
        } else {
            let lo = lo1.clamp(0, grid.n1 as i64 - 2) as usize;
            let hi = (hi1.max(lo as i64 + 1) as usize).min(grid.n1 - 1);
            CellRect { i0: lo, j0, ni: hi - lo, nj }
        }
    }

    pub fn cells(&self, grid: &GridSpec) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.ni * self.nj);
        for a in 0..self.ni {
            for b in 0..self.nj {
                out.push(((self.i0 + a) % grid.n1, (self.j0 + b) % grid.n2));
            }
        }
        out
    }

    /// Boundary nodes, counterclockwise, first node not repeated.
    pub fn boundary(&self, grid: &GridSpec) -> Vec<(usize, usize)> {
        let (n1, n2) = (grid.n1, grid.n2);
        let mut v = Vec::with_capacity(2 * (self.ni + self.nj));
        for a in 0..self.ni {
            v.push(((self.i0 + a) % n1, self.j0 % n2));
        }
        for b in 0..self.nj {
            v.push(((self.i0 + self.ni) % n1, (self.j0 + b) % n2));
        }
        for a in (1..=self.ni).rev() {
            v.push(((self.i0 + a) % n1, (self.j0 + self.nj) % n2));
        }
        for b in (1..=self.nj).rev() {
            v.push((self.i0 % n1, (self.j0 + b) % n2));
        }
        v
    }
}

/// Index of u along the boundary of `rect`:
/// (1/2π)(Σ_edges Δ + Σ_enclosed κ·area). Every boundary node needs |w| ≥ 1/2.
pub fn loop_index(u: &TangentField, rect: &CellRect) -> Result<i32> {
    let g = &u.grid;
    if !g.periodic1() && rect.i0 + rect.ni > g.n1 - 1 {
        return Err(Error::InvalidGrid("loop leaves the sphere rings".into()));
    }
    let nodes = rect.boundary(g);
    for &(i, j) in &nodes {
        let m = u.at(i, j).norm();
        if m < 0.5 {
            return Err(Error::LowModulus { i, j, modulus: m });
        }
    }
    let mut circ = 0.0;
    for k in 0..nodes.len() {
        let (p, q) = (nodes[k], nodes[(k + 1) % nodes.len()]);
        // direction-2 edges carry the connection; orientation from the step direction
        let a = if p.0 == q.0 {
            if q.1 == g.next2(p.1) {
                g.connection2(p.0)
            } else {
                -g.connection2(p.0)
            }
        } else {
            0.0
        };
        circ += increment(u.at(p.0, p.1), u.at(q.0, q.1), a);
    }
    let kappa = gauss_curvature(&g.surface, ChartPoint::new(PI / 2.0, 0.0));
    let area: f64 = rect.cells(g).iter().map(|&(i, _)| g.cell_area(i)).sum();
    Ok(((circ + kappa * area) / TAU).round() as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Energy {
    pub total: f64,
    /// e_ε per node (already divided by node area).
    pub density: Vec<f64>,
}

/// F_ε = Σ [½|Dw|² + (1/4ε²)(|w|² − 1)²]·area with gauge-covariant forward differences
/// ((w_q e^{−i∫𝒜} − w_p)/ℓ). On the torus this is exactly the functional whose
/// gradient flow `flow` integrates.
pub fn gl_energy(u: &TangentField, eps: f64) -> Result<Energy> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let g = &u.grid;
    let c = 0.25 / (eps * eps);
    let mut density = vec![0.0; g.len()];
    let mut weighted = vec![0.0; g.len()];
    for i in 0..g.n1 {
        let (l1, l2) = g.edge_lengths(i);
        let rot = Complex64::from_polar(1.0, -g.connection2(i));
        let area = g.node_area(i);
        for j in 0..g.n2 {
            let k = g.idx(i, j);
            let w = u.w[k];
            let mut kin = 0.0;
            if i < g.cell_rows() {
                kin += (u.w[g.idx(g.next1(i), j)] - w).norm_sqr() / (l1 * l1);
            }
            kin += (u.w[g.idx(i, g.next2(j))] * rot - w).norm_sqr() / (l2 * l2);
            let pot = w.norm_sqr() - 1.0;
            density[k] = 0.5 * kin + c * pot * pot;
            weighted[k] = density[k] * area;
        }
    }
    Ok(Energy { total: pairwise_sum(&weighted), density })
}

/// ℙ on the grid: mean edge density of each basis direction (torus), empty on the sphere.
pub fn harmonic_projection(j: &OneFormGrid) -> HarmonicCoeffs {
    let g = &j.grid;
    match g.surface {
        Surface::Sphere { .. } => HarmonicCoeffs::empty(),
        Surface::FlatTorus { .. } => {
            let (h1, h2) = g.spacing();
            let n = g.len() as f64;
            HarmonicCoeffs::new(vec![pairwise_sum(&j.e1) / (n * h1), pairwise_sum(&j.e2) / (n * h2)])
        }
    }
}

/// Fixed-order pairwise summation; results do not depend on thread count.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        x.iter().sum()
    } else {
        let m = x.len() / 2;
        pairwise_sum(&x[..m]) + pairwise_sum(&x[m..])
    }
}
