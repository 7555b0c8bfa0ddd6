//! Renormalized energy W(a, d, ξ), the affine lattice L(a, d) of admissible harmonic
//! parts, its continuation Ξ along vortex motions, and the constrained gradient ∇_a W.
//!
//! Torus conventions: ξ = ξ₁dx + ξ₂dy, generator γ₁ is the circle y = c₁ run in +x,
//! γ₂ is x = c₂ run in +y, so α = diag(L₁, L₂). Integrating −⋆dψ along them gives
//!
//!   ζ₁ = 2π Σ d_j frac((c₁ − a_j,y)/L₂),   ζ₂ = −2π Σ d_j frac((c₂ − a_j,x)/L₁)
//!
//! (Σ d_j = 0 removes the constant parts), which is what `zeta_offsets` evaluates.
//! `zeta_offsets_quadrature` integrates the Green function along the same curves and
//! serves as the independent check.

use std::f64::consts::{PI, TAU};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Admissibility, Error, Result};
use crate::geometry::{exp_map, geodesic_distance, min_image, rotate90, wrap_angle, ChartPoint, Surface, TangentVec};
use crate::green::{psi0_value, GreenFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexConfig {
    pub a: Vec<ChartPoint>,
    pub d: Vec<i32>,
}

impl VortexConfig {
    pub fn new(a: Vec<ChartPoint>, d: Vec<i32>) -> Self {
        Self { a, d }
    }

    pub fn empty() -> Self {
        Self { a: vec![], d: vec![] }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn min_separation(&self, s: &Surface) -> f64 {
        let mut m = f64::INFINITY;
        for j in 0..self.a.len() {
            for k in j + 1..self.a.len() {
                m = m.min(geodesic_distance(s, self.a[j], self.a[k]));
            }
        }
        m
    }

    /// Σ |d_j|, the number of unit cores for the energy expansion.
    pub fn core_count(&self) -> i32 {
        self.d.iter().map(|d| d.abs()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoeffs {
    pub xi: Vec<f64>,
}

impl HarmonicCoeffs {
    pub fn new(xi: Vec<f64>) -> Self {
        Self { xi }
    }

    pub fn empty() -> Self {
        Self { xi: vec![] }
    }

    pub fn zeros(s: &Surface) -> Self {
        Self { xi: vec![0.0; s.harmonic_dim()] }
    }

    fn check(&self, s: &Surface) -> Result<()> {
        if self.xi.len() != s.harmonic_dim() {
            return Err(Error::HarmonicLength { expected: s.harmonic_dim(), found: self.xi.len() });
        }
        Ok(())
    }

    /// ½∫|ξ|² vol.
    pub fn energy(&self, s: &Surface) -> f64 {
        0.5 * s.volume() * self.xi.iter().map(|x| x * x).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeOffset {
    /// Components reduced to [0, 2π).
    pub zeta: Vec<f64>,
}

/// Default containment tolerance for L(a, d).
pub const LATTICE_TOL: f64 = 1e-6;

pub fn check_admissible(c: &VortexConfig, s: &Surface) -> Result<(), Admissibility> {
    if c.a.len() != c.d.len() {
        return Err(Admissibility::LengthMismatch { points: c.a.len(), charges: c.d.len() });
    }
    let total: i32 = c.d.iter().sum();
    if total != s.euler_characteristic() {
        return Err(Admissibility::WrongTotalCharge { expected: s.euler_characteristic(), found: total });
    }
    if let Surface::Sphere { .. } = s {
        for (j, p) in c.a.iter().enumerate() {
            if s.check_point(*p).is_err() {
                return Err(Admissibility::OnPole(j));
            }
        }
    }
    let tiny = 1e-9 * s.scale();
    for j in 0..c.a.len() {
        for k in j + 1..c.a.len() {
            let dist = geodesic_distance(s, c.a[j], c.a[k]);
            if dist <= tiny {
                return Err(Admissibility::DuplicatePoint { j, k, dist });
            }
        }
    }
    Ok(())
}

/// α: ξ ↦ (∫_{γ_k} ξ)_k.
pub fn alpha(s: &Surface) -> Vec<f64> {
    match *s {
        Surface::FlatTorus { l1, l2 } => vec![l1, l2],
        Surface::Sphere { .. } => vec![],
    }
}

/// Generator offsets (c₁, c₂): the candidate among 32 evenly spaced levels that stays
/// farthest from every vortex coordinate.
pub fn generator_offsets(c: &VortexConfig, s: &Surface) -> [f64; 2] {
    let Surface::FlatTorus { l1, l2 } = *s else { return [0.0; 2] };
    let pick = |l: f64, coord: &dyn Fn(&ChartPoint) -> f64| -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..32 {
            let lvl = l * (k as f64 + 0.5) / 32.0;
            let m = c.a.iter().map(|p| min_image(coord(p) - lvl, l).abs()).fold(f64::INFINITY, f64::min);
            if m > best.0 + 1e-12 {
                best = (m, lvl);
            }
        }
        best.1
    };
    [pick(l2, &|p: &ChartPoint| p.x2), pick(l1, &|p: &ChartPoint| p.x1)]
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// ζ(a, d) from the generator integrals, before reduction mod 2π.
fn zeta_unreduced(c: &VortexConfig, s: &Surface, off: [f64; 2]) -> Vec<f64> {
    match *s {
        Surface::Sphere { .. } => vec![],
        Surface::FlatTorus { l1, l2 } => {
            let (mut z1, mut z2) = (0.0, 0.0);
            for (p, &d) in c.a.iter().zip(&c.d) {
                z1 += TAU * d as f64 * frac((off[0] - p.x2) / l2);
                z2 -= TAU * d as f64 * frac((off[1] - p.x1) / l1);
            }
            vec![z1, z2]
        }
    }
}

pub fn zeta_offsets(c: &VortexConfig, s: &Surface) -> Result<LatticeOffset> {
    check_admissible(c, s)?;
    let z = zeta_unreduced(c, s, generator_offsets(c, s));
    Ok(LatticeOffset { zeta: z.into_iter().map(|x| x.rem_euclid(TAU)).collect() })
}

/// Quadrature of ∫_{γ_k} −⋆dψ with ψ = 2π Σ d_j G(·, a_j); composite Gauss–Legendre
/// with `panels` panels of order 16. Torus only; returns the unreduced values.
pub fn zeta_offsets_quadrature(gf: &GreenFunction, c: &VortexConfig, off: [f64; 2], panels: usize) -> Result<Vec<f64>> {
    let Surface::FlatTorus { l1, l2 } = *gf.surface() else { return Err(Error::TorusOnly) };
    let gl = GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero"));
    let grad_psi = |x: ChartPoint| -> [f64; 2] {
        let mut g = [0.0; 2];
        for (p, &d) in c.a.iter().zip(&c.d) {
            let v = gf.grad_x(x, *p).map(|t| t.v).unwrap_or([0.0; 2]);
            g[0] += TAU * d as f64 * v[0];
            g[1] += TAU * d as f64 * v[1];
        }
        g
    };
    // −⋆dψ = ψ_y dx − ψ_x dy
    let (mut z1, mut z2) = (0.0, 0.0);
    for k in 0..panels {
        let (a, b) = (l1 * k as f64 / panels as f64, l1 * (k + 1) as f64 / panels as f64);
        z1 += gl.integrate(a, b, |x| grad_psi(ChartPoint::new(x, off[0]))[1]);
        let (a, b) = (l2 * k as f64 / panels as f64, l2 * (k + 1) as f64 / panels as f64);
        z2 -= gl.integrate(a, b, |y| grad_psi(ChartPoint::new(off[1], y))[0]);
    }
    Ok(vec![z1, z2])
}

/// Residues r_k = wrap(α_k ξ_k + ζ_k) ∈ (−π, π] and the containment verdict.
pub fn lattice_contains(xi: &HarmonicCoeffs, c: &VortexConfig, s: &Surface, tol: f64) -> Result<(bool, Vec<f64>)> {
    xi.check(s)?;
    let z = zeta_offsets(c, s)?;
    let r: Vec<f64> = alpha(s).iter().zip(&xi.xi).zip(&z.zeta).map(|((a, x), z)| wrap_angle(a * x + z)).collect();
    let ok = r.iter().all(|v| v.abs() < tol);
    Ok((ok, r))
}

/// ξ = α⁻¹(2πm − ζ).
pub fn lattice_element(c: &VortexConfig, s: &Surface, m: &[i64]) -> Result<HarmonicCoeffs> {
    let z = zeta_offsets(c, s)?;
    if m.len() != z.zeta.len() {
        return Err(Error::HarmonicLength { expected: z.zeta.len(), found: m.len() });
    }
    Ok(HarmonicCoeffs::new(
        alpha(s).iter().zip(&z.zeta).zip(m).map(|((a, z), &mk)| (TAU * mk as f64 - z) / a).collect(),
    ))
}

/// Lattice element of L(a, d) closest to `target` (componentwise, α is diagonal).
pub fn nearest_lattice_xi(c: &VortexConfig, s: &Surface, target: &HarmonicCoeffs) -> Result<HarmonicCoeffs> {
    target.check(s)?;
    let z = zeta_offsets(c, s)?;
    let m: Vec<i64> =
        alpha(s).iter().zip(&z.zeta).zip(&target.xi).map(|((a, z), t)| ((a * t + z) / TAU).round() as i64).collect();
    lattice_element(c, s, &m)
}

/// Per-vortex chart displacement from c0 to c1 (minimal image on the torus, the
/// log map on the sphere).
fn path_steps(s: &Surface, c0: &VortexConfig, c1: &VortexConfig) -> Result<Vec<[f64; 2]>> {
    c0.a.iter()
        .zip(&c1.a)
        .map(|(p, q)| match *s {
            Surface::FlatTorus { l1, l2 } => Ok([min_image(q.x1 - p.x1, l1), min_image(q.x2 - p.x2, l2)]),
            Surface::Sphere { .. } => crate::geometry::log_map(s, *p, *q).map(|v| v.v),
        })
        .collect()
}

fn config_along(s: &Surface, c0: &VortexConfig, steps: &[[f64; 2]], t: f64) -> VortexConfig {
    let a = c0
        .a
        .iter()
        .zip(steps)
        .map(|(p, st)| exp_map(s, &TangentVec::new(*p, [t * st[0], t * st[1]])))
        .collect();
    VortexConfig::new(a, c0.d.clone())
}

/// Ξ(c1) = α⁻¹(αξ₀ + ζ(c0) − ζ(c1)), ζ unwrapped along the straight path from c0 to c1
/// (geodesic per vortex), refined until every wrapped increment is below π/2.
pub fn xi_continuation(s: &Surface, c0: &VortexConfig, xi0: &HarmonicCoeffs, c1: &VortexConfig) -> Result<HarmonicCoeffs> {
    xi0.check(s)?;
    check_admissible(c0, s)?;
    check_admissible(c1, s)?;
    if c0.d != c1.d {
        return Err(Error::InvalidParameter("charges differ along the path".into()));
    }
    if s.harmonic_dim() == 0 {
        return Ok(HarmonicCoeffs::empty());
    }
    let steps = path_steps(s, c0, c1)?;
    let mut n = 1usize;
    'refine: loop {
        let mut dz = vec![0.0; s.harmonic_dim()];
        let mut prev = zeta_offsets(c0, s)?.zeta;
        for k in 1..=n {
            let ck = config_along(s, c0, &steps, k as f64 / n as f64);
            check_admissible(&ck, s)?;
            let z = zeta_offsets(&ck, s)?.zeta;
            for (acc, (a, b)) in dz.iter_mut().zip(z.iter().zip(&prev)) {
                let inc = wrap_angle(a - b);
                if inc.abs() >= PI / 2.0 {
                    if n > 1 << 20 {
                        return Err(Error::InvalidParameter("zeta unwrapping did not converge".into()));
                    }
                    n *= 2;
                    continue 'refine;
                }
                *acc += inc;
            }
            prev = z;
        }
        let al = alpha(s);
        return Ok(HarmonicCoeffs::new((0..al.len()).map(|k| xi0.xi[k] - dz[k] / al[k]).collect()));
    }
}

/// Ξ′(a)·v for a move of vortex j: the harmonic form whose generator integrals are
/// 2π d_j ∫_{γ_k} ⋆dσ(·, a_j, v). On the flat torus those integrals are
/// (2π d_j v_y / L₂, −2π d_j v_x / L₁).
pub fn xi_derivative(s: &Surface, c: &VortexConfig, j: usize, v: &TangentVec) -> Result<HarmonicCoeffs> {
    check_admissible(c, s)?;
    if j >= c.len() {
        return Err(Error::InvalidParameter(format!("vortex index {j} out of range")));
    }
    match *s {
        Surface::Sphere { .. } => Ok(HarmonicCoeffs::empty()),
        Surface::FlatTorus { l1, l2 } => {
            let dj = TAU * c.d[j] as f64 / (l1 * l2);
            Ok(HarmonicCoeffs::new(vec![dj * v.v[1], -dj * v.v[0]]))
        }
    }
}

/// Same as `xi_derivative`, by quadrature of ⋆dσ along the generators (torus only).
pub fn xi_derivative_quadrature(gf: &GreenFunction, c: &VortexConfig, j: usize, v: &TangentVec, panels: usize) -> Result<HarmonicCoeffs> {
    let Surface::FlatTorus { l1, l2 } = *gf.surface() else { return Err(Error::TorusOnly) };
    let off = generator_offsets(c, gf.surface());
    let gl = GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero"));
    let a = c.a[j];
    // ⋆dσ = σ_x dy − σ_y dx
    let (mut i1, mut i2) = (0.0, 0.0);
    for k in 0..panels {
        let (p, q) = (l1 * k as f64 / panels as f64, l1 * (k + 1) as f64 / panels as f64);
        i1 -= gl.integrate(p, q, |x| gf.grad_x_sigma(ChartPoint::new(x, off[0]), a, v).map(|g| g[1]).unwrap_or(0.0));
        let (p, q) = (l2 * k as f64 / panels as f64, l2 * (k + 1) as f64 / panels as f64);
        i2 += gl.integrate(p, q, |y| gf.grad_x_sigma(ChartPoint::new(off[1], y), a, v).map(|g| g[0]).unwrap_or(0.0));
    }
    let f = TAU * c.d[j] as f64;
    Ok(HarmonicCoeffs::new(vec![f * i1 / l1, f * i2 / l2]))
}

/// Evaluator for W and ∇W with cached Green tables.
#[derive(Clone, Debug)]
pub struct Renormalized {
    gf: GreenFunction,
}

impl Renormalized {
    pub fn new(s: &Surface) -> Result<Self> {
        Ok(Self { gf: GreenFunction::new(s)? })
    }

    pub fn green(&self) -> &GreenFunction {
        &self.gf
    }

    pub fn surface(&self) -> &Surface {
        self.gf.surface()
    }

    /// W without the lattice check.
    pub fn value_unchecked(&self, c: &VortexConfig, xi: &HarmonicCoeffs) -> Result<f64> {
        let s = *self.surface();
        check_admissible(c, &s)?;
        xi.check(&s)?;
        let mut pair = 0.0;
        for j in 0..c.len() {
            for k in j + 1..c.len() {
                pair += (c.d[j] * c.d[k]) as f64 * self.gf.value(c.a[j], c.a[k])?;
            }
        }
        let mut diag = 0.0;
        for j in 0..c.len() {
            let dj = c.d[j] as f64;
            diag += PI * dj * dj * self.gf.regular_part_diag(c.a[j])? + dj * psi0_value(&s, c.a[j]);
        }
        // ½∫|dψ₀|² vanishes with ψ₀
        Ok(4.0 * PI * PI * pair + TAU * diag + xi.energy(&s))
    }

    /// W(a, d, ξ). With `strict`, ξ must lie in L(a, d); otherwise a residue outside the
    /// tolerance only logs a warning (parameter scans over ξ).
    pub fn value(&self, c: &VortexConfig, xi: &HarmonicCoeffs, strict: bool) -> Result<f64> {
        let (ok, residues) = lattice_contains(xi, c, self.surface(), LATTICE_TOL)?;
        if !ok {
            if strict {
                return Err(Error::LatticeViolation { residues });
            }
            log::warn!("W evaluated off the lattice, residues {residues:?}");
        }
        self.value_unchecked(c, xi)
    }

    /// ∇_{a_j} W = 2π d_j (∇S_j(a_j) + 2π d_j ∇H(a_j, a_j) + i ξ^♯(a_j)).
    pub fn gradient_unchecked(&self, c: &VortexConfig, xi: &HarmonicCoeffs) -> Result<Vec<TangentVec>> {
        let s = *self.surface();
        check_admissible(c, &s)?;
        xi.check(&s)?;
        let mut out = Vec::with_capacity(c.len());
        for j in 0..c.len() {
            let dj = c.d[j] as f64;
            let mut g = [0.0; 2];
            for k in 0..c.len() {
                if k != j {
                    let v = self.gf.grad_x(c.a[j], c.a[k])?.v;
                    g[0] += TAU * c.d[k] as f64 * v[0];
                    g[1] += TAU * c.d[k] as f64 * v[1];
                }
            }
            let gh = self.gf.regular_part_grad_diag(c.a[j])?.v;
            g[0] += TAU * dj * gh[0];
            g[1] += TAU * dj * gh[1];
            if xi.xi.len() == 2 {
                let ix = rotate90(&TangentVec::new(c.a[j], [xi.xi[0], xi.xi[1]]));
                g[0] += ix.v[0];
                g[1] += ix.v[1];
            }
            out.push(TangentVec::new(c.a[j], [TAU * dj * g[0], TAU * dj * g[1]]));
        }
        Ok(out)
    }

    pub fn gradient(&self, c: &VortexConfig, xi: &HarmonicCoeffs) -> Result<Vec<TangentVec>> {
        let (ok, residues) = lattice_contains(xi, c, self.surface(), LATTICE_TOL)?;
        if !ok {
            return Err(Error::LatticeViolation { residues });
        }
        self.gradient_unchecked(c, xi)
    }
}

pub fn w_value(s: &Surface, c: &VortexConfig, xi: &HarmonicCoeffs) -> Result<f64> {
    Renormalized::new(s)?.value(c, xi, true)
}

pub fn w_gradient(s: &Surface, c: &VortexConfig, xi: &HarmonicCoeffs) -> Result<Vec<TangentVec>> {
    Renormalized::new(s)?.gradient(c, xi)
}

pub const W_SCHEMA: &str = "vortexflow.renormalized-energy/1";

/// Versioned JSON record of (surface, a, d, ξ, W, ∇W).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WRecord {
    pub schema: String,
    pub surface: Surface,
    pub a: Vec<[f64; 2]>,
    pub d: Vec<i32>,
    pub xi: Vec<f64>,
    pub w: f64,
    pub grad: Vec<[f64; 2]>,
}

impl WRecord {
    pub fn compute(s: &Surface, c: &VortexConfig, xi: &HarmonicCoeffs) -> Result<Self> {
        let r = Renormalized::new(s)?;
        Ok(Self {
            schema: W_SCHEMA.into(),
            surface: *s,
            a: c.a.iter().map(|p| [p.x1, p.x2]).collect(),
            d: c.d.clone(),
            xi: xi.xi.clone(),
            w: r.value(c, xi, true)?,
            grad: r.gradient(c, xi)?.iter().map(|g| g.v).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn torus() -> Surface {
        Surface::torus(1.0, 1.0).unwrap()
    }

    fn dipole(r: f64) -> VortexConfig {
        VortexConfig::new(vec![ChartPoint::new(0.5 - r / 2.0, 0.5), ChartPoint::new(0.5 + r / 2.0, 0.5)], vec![1, -1])
    }

    #[test]
    fn admissibility_examples() {
        let sp = Surface::sphere(1.0).unwrap();
        let two = VortexConfig::new(vec![ChartPoint::new(1.0, 0.0), ChartPoint::new(2.0, 1.0)], vec![1, 1]);
        assert!(check_admissible(&two, &sp).is_ok());
        assert!(check_admissible(&dipole(0.3), &torus()).is_ok());
        let bad = VortexConfig::new(two.a.clone(), vec![1, -1]);
        assert!(matches!(check_admissible(&bad, &sp), Err(Admissibility::WrongTotalCharge { .. })));
        let dup = VortexConfig::new(vec![ChartPoint::new(0.2, 0.2); 2], vec![1, -1]);
        assert!(matches!(check_admissible(&dup, &torus()), Err(Admissibility::DuplicatePoint { .. })));
    }

    #[test]
    fn zeta_closed_form_matches_quadrature() {
        let s = Surface::torus(1.2, 0.9).unwrap();
        let gf = GreenFunction::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let c = VortexConfig::new(
                (0..4).map(|_| ChartPoint::new(rng.gen_range(0.0..1.2), rng.gen_range(0.0..0.9))).collect(),
                vec![1, -1, 1, -1],
            );
            let off = generator_offsets(&c, &s);
            let q = zeta_offsets_quadrature(&gf, &c, off, 64).unwrap();
            let z = zeta_unreduced(&c, &s, off);
            for k in 0..2 {
                assert!(wrap_angle(q[k] - z[k]).abs() < 1e-8, "{k}: {} vs {}", q[k], z[k]);
            }
        }
    }

    #[test]
    fn zeta_period_shift_and_reflection() {
        let s = torus();
        let c = VortexConfig::new(vec![ChartPoint::new(0.2, 0.3), ChartPoint::new(0.6, 0.8)], vec![1, -1]);
        let mut shifted = c.clone();
        shifted.a[0].x1 += 1.0;
        let (z, zs) = (zeta_offsets(&c, &s).unwrap(), zeta_offsets(&shifted, &s).unwrap());
        for k in 0..2 {
            assert!(wrap_angle(z.zeta[k] - zs.zeta[k]).abs() < 1e-12);
        }
        // dipole symmetric about γ₁ (y = 1/2 line): reflect y ↦ 1 − y flips ζ
        let c = VortexConfig::new(vec![ChartPoint::new(0.3, 0.4), ChartPoint::new(0.7, 0.35)], vec![1, -1]);
        let r = VortexConfig::new(c.a.iter().map(|p| ChartPoint::new(p.x1, 1.0 - p.x2)).collect(), c.d.clone());
        let (z, zr) = (zeta_offsets(&c, &s).unwrap(), zeta_offsets(&r, &s).unwrap());
        assert!(wrap_angle(z.zeta[0] + zr.zeta[0]).abs() < 1e-12);
        assert!(zeta_offsets(&VortexConfig::new(vec![ChartPoint::new(1.0, 0.0), ChartPoint::new(2.0, 0.0)], vec![1, 1]), &Surface::sphere(1.0).unwrap()).unwrap().zeta.is_empty());
    }

    #[test]
    fn lattice_membership() {
        let s = torus();
        let c = dipole(0.4);
        let xi = lattice_element(&c, &s, &[1, -2]).unwrap();
        let (ok, r) = lattice_contains(&xi, &c, &s, LATTICE_TOL).unwrap();
        assert!(ok && r.iter().all(|x| x.abs() < 1e-12));
        let half = HarmonicCoeffs::new(vec![xi.xi[0] + PI, xi.xi[1]]);
        let (ok, r) = lattice_contains(&half, &c, &s, LATTICE_TOL).unwrap();
        assert!(!ok && (r[0].abs() - PI).abs() < 1e-9);
        let sp = Surface::sphere(1.0).unwrap();
        let two = VortexConfig::new(vec![ChartPoint::new(1.0, 0.0), ChartPoint::new(2.0, 1.0)], vec![1, 1]);
        assert!(lattice_contains(&HarmonicCoeffs::empty(), &two, &sp, LATTICE_TOL).unwrap().0);
    }

    #[test]
    fn nearest_lattice_for_horizontal_dipole() {
        // ζ = (0, −0.8π): the element nearest 0 is ξ = (0, 0.8π)
        let xi = nearest_lattice_xi(&dipole(0.4), &torus(), &HarmonicCoeffs::zeros(&torus())).unwrap();
        assert!(xi.xi[0].abs() < 1e-12 && (xi.xi[1] - 0.8 * PI).abs() < 1e-12);
    }

    #[test]
    fn continuation_identity_taylor_and_membership() {
        let s = torus();
        let c0 = VortexConfig::new(vec![ChartPoint::new(0.2, 0.3), ChartPoint::new(0.55, 0.75)], vec![1, -1]);
        let xi0 = lattice_element(&c0, &s, &[0, 1]).unwrap();
        assert_eq!(xi_continuation(&s, &c0, &xi0, &c0).unwrap(), xi0);
        let v = TangentVec::new(c0.a[0], [0.6, -0.8]);
        let delta = 1e-4;
        let mut c1 = c0.clone();
        c1.a[0] = exp_map(&s, &v.scale(delta));
        let xi1 = xi_continuation(&s, &c0, &xi0, &c1).unwrap();
        let der = xi_derivative(&s, &c0, 0, &v).unwrap();
        for k in 0..2 {
            assert!((xi1.xi[k] - xi0.xi[k] - delta * der.xi[k]).abs() < 1e-10);
        }
        // long move across both generators
        let mut c2 = c0.clone();
        c2.a[0] = ChartPoint::new(0.9, 0.95);
        let xi2 = xi_continuation(&s, &c0, &xi0, &c2).unwrap();
        assert!(lattice_contains(&xi2, &c2, &s, LATTICE_TOL).unwrap().0);
    }

    #[test]
    fn xi_derivative_linear_and_matches_quadrature() {
        let s = Surface::torus(1.0, 1.3).unwrap();
        let gf = GreenFunction::new(&s).unwrap();
        let c = VortexConfig::new(vec![ChartPoint::new(0.2, 0.3), ChartPoint::new(0.65, 0.9)], vec![-1, 1]);
        let v = TangentVec::new(c.a[1], [0.3, 0.7]);
        let a = xi_derivative(&s, &c, 1, &v).unwrap();
        let b = xi_derivative(&s, &c, 1, &v.scale(2.0)).unwrap();
        assert!((b.xi[0] - 2.0 * a.xi[0]).abs() < 1e-12 && (b.xi[1] - 2.0 * a.xi[1]).abs() < 1e-12);
        let q = xi_derivative_quadrature(&gf, &c, 1, &v, 64).unwrap();
        for k in 0..2 {
            assert!((q.xi[k] - a.xi[k]).abs() < 1e-8 * a.xi[k].abs().max(1.0), "{k}: {} vs {}", q.xi[k], a.xi[k]);
        }
        // FD oracle against the continuation
        let t = 1e-5;
        let mut c1 = c.clone();
        c1.a[1] = exp_map(&s, &v.scale(t));
        let xi0 = lattice_element(&c, &s, &[0, 0]).unwrap();
        let xi1 = xi_continuation(&s, &c, &xi0, &c1).unwrap();
        for k in 0..2 {
            let fd = (xi1.xi[k] - xi0.xi[k]) / t;
            assert!((fd - a.xi[k]).abs() < 1e-4 * a.xi[k].abs());
        }
    }

    #[test]
    fn quadratic_xi_term() {
        let s = Surface::torus(1.3, 0.8).unwrap();
        let r = Renormalized::new(&s).unwrap();
        let c = VortexConfig::new(vec![ChartPoint::new(0.2, 0.3), ChartPoint::new(0.65, 0.5)], vec![1, -1]);
        let xi = HarmonicCoeffs::new(vec![0.7, -1.9]);
        let w0 = r.value(&c, &HarmonicCoeffs::zeros(&s), false).unwrap();
        let w1 = r.value(&c, &xi, false).unwrap();
        assert!((w1 - w0 - 0.5 * 1.3 * 0.8 * (0.49 + 3.61)).abs() < 1e-12);
        assert!(matches!(r.value(&c, &xi, true), Err(Error::LatticeViolation { .. })));
    }

    #[test]
    fn dipole_log_divergence() {
        let s = torus();
        let r = Renormalized::new(&s).unwrap();
        let rs = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let w: Vec<f64> = rs.iter().map(|&d| r.value_unchecked(&dipole(d), &HarmonicCoeffs::zeros(&s)).unwrap()).collect();
        let rem: Vec<f64> = rs.iter().zip(&w).map(|(d, w)| w - TAU * d.ln()).collect();
        let spread = rem.iter().cloned().fold(f64::MIN, f64::max) - rem.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.2, "{rem:?}");
        let slope = (w[0] - w[4]) / (rs[0].ln() - rs[4].ln());
        assert!((slope - TAU).abs() < 0.05 * TAU);
        // like charges repel: slope −2π (use a sphere pair)
        let sp = Surface::sphere(1.0).unwrap();
        let rsp = Renormalized::new(&sp).unwrap();
        let pair = |d: f64| VortexConfig::new(vec![ChartPoint::new(1.0, 0.5), ChartPoint::new(1.0 + d, 0.5)], vec![1, 1]);
        let slope = (rsp.value(&pair(1e-3), &HarmonicCoeffs::empty(), true).unwrap()
            - rsp.value(&pair(1e-1), &HarmonicCoeffs::empty(), true).unwrap())
            / (1e-3f64.ln() - 1e-1f64.ln());
        assert!((slope + TAU).abs() < 0.05 * TAU);
    }

    #[test]
    fn sphere_pair_minimized_antipodally() {
        let s = Surface::sphere(1.0).unwrap();
        let r = Renormalized::new(&s).unwrap();
        let p = ChartPoint::new(PI / 2.0, 0.0);
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=100 {
            let psi = PI * k as f64 / 100.0;
            let q = exp_map(&s, &TangentVec::new(p, [0.0, psi * 0.999_999]));
            let w = r.value(&VortexConfig::new(vec![p, q], vec![1, 1]), &HarmonicCoeffs::empty(), true).unwrap();
            if w < best.0 {
                best = (w, psi);
            }
        }
        assert!((best.1 - PI).abs() < 1e-12);
    }

    #[test]
    fn antipodal_sphere_pair_is_critical() {
        let s = Surface::sphere(1.0).unwrap();
        let p = ChartPoint::new(0.9, 0.4);
        let c = VortexConfig::new(vec![p, crate::geometry::antipode(&s, p)], vec![1, 1]);
        for g in w_gradient(&s, &c, &HarmonicCoeffs::empty()).unwrap() {
            assert!(g.norm() < 1e-8);
        }
    }

    #[test]
    fn dipole_attracts_along_geodesic() {
        let s = torus();
        let c = VortexConfig::new(vec![ChartPoint::new(0.35, 0.5), ChartPoint::new(0.38, 0.54)], vec![1, -1]);
        let xi = HarmonicCoeffs::zeros(&s);
        let g = Renormalized::new(&s).unwrap().gradient_unchecked(&c, &xi).unwrap();
        let dir: [f64; 2] = [0.03, 0.04];
        let ang = (-g[0].v[1]).atan2(-g[0].v[0]) - dir[1].atan2(dir[0]);
        assert!(wrap_angle(ang).abs() < 1e-2, "{ang}");
    }

    fn fd_gradient(r: &Renormalized, c: &VortexConfig, xi: &HarmonicCoeffs, j: usize, v: [f64; 2], t: f64) -> f64 {
        let s = *r.surface();
        let at = |h: f64| {
            let mut b = c.clone();
            b.a[j] = exp_map(&s, &TangentVec::new(c.a[j], [h * v[0], h * v[1]]));
            let xb = xi_continuation(&s, c, xi, &b).unwrap();
            r.value(&b, &xb, true).unwrap()
        };
        (at(t) - at(-t)) / (2.0 * t)
    }

    #[test]
    fn constrained_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in [Surface::torus(1.0, 1.2).unwrap(), Surface::sphere(1.1).unwrap()] {
            let r = Renormalized::new(&s).unwrap();
            for _ in 0..3 {
                let d = if s.is_torus() { vec![1, -1, 1, -1] } else { vec![1, 1, 1, -1] };
                let c = VortexConfig::new(
                    (0..4).map(|_| ChartPoint::new(rng.gen_range(0.3..1.0), rng.gen_range(0.0..1.0))).collect(),
                    d,
                );
                if c.min_separation(&s) < 0.1 {
                    continue;
                }
                let xi = if s.is_torus() {
                    lattice_element(&c, &s, &[1, 0]).unwrap()
                } else {
                    HarmonicCoeffs::empty()
                };
                let g = r.gradient(&c, &xi).unwrap();
                for j in 0..4 {
                    for v in [[1.0, 0.0], [0.0, 1.0]] {
                        let fd = fd_gradient(&r, &c, &xi, j, v, 1e-4);
                        let an = g[j].v[0] * v[0] + g[j].v[1] * v[1];
                        assert!((fd - an).abs() < 1e-5 * g[j].norm().max(1.0), "{s:?} {j}: fd {fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn exchange_symmetry() {
        let s = torus();
        let r = Renormalized::new(&s).unwrap();
        let c = VortexConfig::new(vec![ChartPoint::new(0.1, 0.2), ChartPoint::new(0.5, 0.6), ChartPoint::new(0.8, 0.3), ChartPoint::new(0.3, 0.9)], vec![1, -1, -1, 1]);
        let p = VortexConfig::new(vec![c.a[2], c.a[0], c.a[3], c.a[1]], vec![-1, 1, 1, -1]);
        let xi = HarmonicCoeffs::zeros(&s);
        let (a, b) = (r.value_unchecked(&c, &xi).unwrap(), r.value_unchecked(&p, &xi).unwrap());
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn record_roundtrip() {
        let s = torus();
        let c = dipole(0.3);
        let xi = nearest_lattice_xi(&c, &s, &HarmonicCoeffs::zeros(&s)).unwrap();
        let rec = WRecord::compute(&s, &c, &xi).unwrap();
        let txt = serde_json::to_string(&rec).unwrap();
        let back: WRecord = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.schema, W_SCHEMA);
    }
}
