//! Gradient flow of the renormalized energy, a′ = −(1/π)∇_a W(a, d, ξ), with ξ slaved to
//! the configuration through the conserved lattice offset m = αξ + ζ(a).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dexp_inv, exp_map, geodesic_distance, wrap_angle, Surface, TangentVec};
use crate::renorm::{alpha, check_admissible, lattice_contains, zeta_offsets, HarmonicCoeffs, Renormalized, VortexConfig};

/// Collision tolerance as a fraction of the surface diameter.
pub const COLLISION_FRACTION: f64 = 1e-3;
pub const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeState {
    pub c: VortexConfig,
    pub xi: HarmonicCoeffs,
    pub t: f64,
    /// αξ + ζ with ζ unwrapped from the initial configuration; constant along the flow.
    pub m: Vec<f64>,
    /// ζ unwrapped continuously along the path.
    pub zeta: Vec<f64>,
}

impl OdeState {
    pub fn new(s: &Surface, c: VortexConfig, xi: HarmonicCoeffs) -> Result<Self> {
        check_admissible(&c, s)?;
        let (ok, residues) = lattice_contains(&xi, &c, s, crate::renorm::LATTICE_TOL)?;
        if !ok {
            return Err(Error::LatticeViolation { residues });
        }
        let zeta = zeta_offsets(&c, s)?.zeta;
        let m = alpha(s).iter().zip(&xi.xi).zip(&zeta).map(|((a, x), z)| a * x + z).collect();
        Ok(Self { c, xi, t: 0.0, m, zeta })
    }
}

/// ζ(c1) unwrapped relative to (c0, ζ0); the step must move ζ by less than π/2.
fn unwrap_zeta(s: &Surface, c1: &VortexConfig, c0: &VortexConfig, zeta0: &[f64]) -> Result<Option<Vec<f64>>> {
    if zeta0.is_empty() {
        return Ok(Some(vec![]));
    }
    let (z0, z1) = (zeta_offsets(c0, s)?.zeta, zeta_offsets(c1, s)?.zeta);
    let mut out = Vec::with_capacity(zeta0.len());
    for k in 0..zeta0.len() {
        let inc = wrap_angle(z1[k] - z0[k]);
        if inc.abs() >= PI / 2.0 {
            return Ok(None);
        }
        out.push(zeta0[k] + inc);
    }
    Ok(Some(out))
}

fn xi_from(s: &Surface, m: &[f64], zeta: &[f64]) -> HarmonicCoeffs {
    HarmonicCoeffs::new(alpha(s).iter().zip(m).zip(zeta).map(|((a, m), z)| (m - z) / a).collect())
}

fn nearest_pair(s: &Surface, c: &VortexConfig) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::INFINITY);
    for j in 0..c.len() {
        for k in j + 1..c.len() {
            let d = geodesic_distance(s, c.a[j], c.a[k]);
            if d < best.2 {
                best = (j, k, d);
            }
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct LimitFlow {
    w: Renormalized,
    pub collision_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub surface: Surface,
    pub times: Vec<f64>,
    pub configs: Vec<VortexConfig>,
    pub xis: Vec<HarmonicCoeffs>,
    pub energies: Vec<f64>,
    /// ∫₀ᵗ |∇W|² ds at each sample.
    pub grad_sq_integral: Vec<f64>,
    /// Largest lattice residue seen along the run.
    pub max_residue: f64,
    pub t_star: Option<f64>,
    pub provenance: String,
}

impl Trajectory {
    /// |π/2∫|a′|² + (1/2π)∫|∇W|² + W(T) − W(0)| / (W(0) − W(T)). With a′ = −∇W/π both
    /// integrals equal (1/2π)∫|∇W|².
    pub fn energy_balance_residual(&self) -> f64 {
        let k = self.times.len() - 1;
        let drop = self.energies[0] - self.energies[k];
        let diss = self.grad_sq_integral[k] / PI;
        (diss - drop).abs() / drop.abs().max(f64::MIN_POSITIVE)
    }

    pub fn position(&self, j: usize, t: f64) -> Option<crate::geometry::ChartPoint> {
        let pos: Vec<_> = self.configs.iter().map(|c| c.a[j]).collect();
        crate::tracker::interpolate(&self.times, &pos, t, &self.surface)
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }
}

struct Stage {
    v: Vec<[f64; 2]>,
    grad_sq: f64,
}

impl LimitFlow {
    pub fn new(s: &Surface) -> Result<Self> {
        Ok(Self { w: Renormalized::new(s)?, collision_tol: COLLISION_FRACTION * s.diameter() })
    }

    pub fn surface(&self) -> &Surface {
        self.w.surface()
    }

    /// −(1/π)∇W at the state's configuration and its algebraic ξ.
    pub fn rhs(&self, st: &OdeState) -> Result<Vec<TangentVec>> {
        let s = *self.surface();
        let (j, k, dist) = nearest_pair(&s, &st.c);
        if dist < self.collision_tol {
            return Err(Error::NearCollision { j, k, dist });
        }
        let xi = xi_from(&s, &st.m, &st.zeta);
        Ok(self.w.gradient_unchecked(&st.c, &xi)?.into_iter().map(|g| g.scale(-1.0 / PI)).collect())
    }

    /// Velocity at exp_p(y), pulled back to the base configuration. None when the stage
    /// leaves the admissible set or ζ jumps.
    fn stage(&self, base: &OdeState, y: &[[f64; 2]]) -> Result<Option<Stage>> {
        let s = *self.surface();
        let a: Vec<_> = base.c.a.iter().zip(y).map(|(p, v)| exp_map(&s, &TangentVec::new(*p, *v))).collect();
        let c = VortexConfig::new(a, base.c.d.clone());
        if check_admissible(&c, &s).is_err() {
            return Ok(None);
        }
        let Some(zeta) = unwrap_zeta(&s, &c, &base.c, &base.zeta)? else { return Ok(None) };
        // stages may dip below the collision tolerance; only accepted steps are checked
        let f = match self.w.gradient_unchecked(&c, &xi_from(&s, &base.m, &zeta)) {
            Ok(g) => g.into_iter().map(|g| g.scale(-1.0 / PI)).collect::<Vec<_>>(),
            Err(Error::ChartSingularity(_)) | Err(Error::Coincident(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let grad_sq = f.iter().map(|v| PI * PI * v.dot(v)).sum();
        let v = base.c.a.iter().zip(y).zip(&f).map(|((p, yv), fv)| dexp_inv(&s, &TangentVec::new(*p, *yv), fv.v)).collect();
        Ok(Some(Stage { v, grad_sq }))
    }

    /// One classical RK4 step in normal coordinates at the current configuration.
    /// Returns the new state and ∫|∇W|² over the step, or None if the step must shrink.
    fn rk4(&self, st: &OdeState, dt: f64) -> Result<Option<(OdeState, f64)>> {
        let s = *self.surface();
        let n = st.c.len();
        let comb = |k: &[[f64; 2]], h: f64| -> Vec<[f64; 2]> { k.iter().map(|v| [h * v[0], h * v[1]]).collect() };
        let Some(k1) = self.stage(st, &vec![[0.0; 2]; n])? else { return Ok(None) };
        let Some(k2) = self.stage(st, &comb(&k1.v, 0.5 * dt))? else { return Ok(None) };
        let Some(k3) = self.stage(st, &comb(&k2.v, 0.5 * dt))? else { return Ok(None) };
        let Some(k4) = self.stage(st, &comb(&k3.v, dt))? else { return Ok(None) };
        let y: Vec<[f64; 2]> = (0..n)
            .map(|j| {
                [0, 1].map(|q| dt / 6.0 * (k1.v[j][q] + 2.0 * k2.v[j][q] + 2.0 * k3.v[j][q] + k4.v[j][q]))
            })
            .collect();
        // a step may not move any vortex by more than a quarter of the nearest distance
        let sep = nearest_pair(&s, &st.c).2;
        if y.iter().any(|v| v[0].hypot(v[1]) > 0.25 * sep) {
            return Ok(None);
        }
        let a: Vec<_> = st.c.a.iter().zip(&y).map(|(p, v)| exp_map(&s, &TangentVec::new(*p, *v))).collect();
        let c = VortexConfig::new(a, st.c.d.clone());
        if check_admissible(&c, &s).is_err() {
            return Ok(None);
        }
        let Some(zeta) = unwrap_zeta(&s, &c, &st.c, &st.zeta)? else { return Ok(None) };
        let xi = xi_from(&s, &st.m, &zeta);
        let work = dt / 6.0 * (k1.grad_sq + 2.0 * k2.grad_sq + 2.0 * k3.grad_sq + k4.grad_sq);
        Ok(Some((OdeState { c, xi, t: st.t + dt, m: st.m.clone(), zeta }, work)))
    }

    /// RK4 with step `dt` up to `horizon`, stopping early once two vortices come within
    /// the collision tolerance (T* is then the time reached).
    pub fn integrate(&self, st0: &OdeState, horizon: f64, dt: f64) -> Result<Trajectory> {
        if !(dt > 0.0 && horizon >= 0.0) {
            return Err(Error::InvalidParameter(format!("need dt > 0 and T ≥ 0, got {dt}, {horizon}")));
        }
        let s = *self.surface();
        let mut st = st0.clone();
        st.xi = xi_from(&s, &st.m, &st.zeta);
        let w0 = self.w.value_unchecked(&st.c, &st.xi)?;
        let mut tr = Trajectory {
            surface: s,
            times: vec![st.t],
            configs: vec![st.c.clone()],
            xis: vec![st.xi.clone()],
            energies: vec![w0],
            grad_sq_integral: vec![0.0],
            max_residue: self.residue(&st)?,
            t_star: None,
            provenance: "ode".into(),
        };
        let t_end = st.t + horizon;
        let mut h = dt;
        if st.c.len() >= 2 && nearest_pair(&s, &st.c).2 < self.collision_tol {
            tr.t_star = Some(st.t);
            return Ok(tr);
        }
        while st.t < t_end - 1e-12 * dt {
            let mut halvings = 0;
            let (next, work) = loop {
                let step = h.min(t_end - st.t);
                if let Some(r) = self.rk4(&st, step)? {
                    break r;
                }
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::Stiff(halvings));
                }
                h *= 0.5;
            };
            st = next;
            tr.times.push(st.t);
            tr.configs.push(st.c.clone());
            tr.xis.push(st.xi.clone());
            tr.energies.push(self.w.value_unchecked(&st.c, &st.xi)?);
            let acc = tr.grad_sq_integral.last().copied().unwrap_or(0.0) + work;
            tr.grad_sq_integral.push(acc);
            tr.max_residue = tr.max_residue.max(self.residue(&st)?);
            if st.c.len() >= 2 && nearest_pair(&s, &st.c).2 < self.collision_tol {
                tr.t_star = Some(st.t);
                break;
            }
        }
        Ok(tr)
    }

    fn residue(&self, st: &OdeState) -> Result<f64> {
        let (_, r) = lattice_contains(&st.xi, &st.c, self.surface(), f64::INFINITY)?;
        Ok(r.iter().fold(0.0, |m, x| m.max(x.abs())))
    }
}
