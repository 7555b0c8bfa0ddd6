//! Green function of the Laplace–Beltrami operator, −Δ_x G(·, y) = δ_y − 1/Vol, with
//! zero mean, together with its regular part H = G + (1/2π) log dist and the
//! derivative σ(x, a, v) = (∇_a G(x, a), v).
//!
//! Sphere: closed form in the angular separation. Torus: Ewald split, real-space
//! images with E₁ and a Gaussian-damped Fourier tail.

use std::f64::consts::{FRAC_1_PI, PI, TAU};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};
use crate::geometry::{exp_map, geodesic_distance, log_map, min_image, ChartPoint, Surface, TangentVec};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenEval {
    pub value: f64,
    pub grad_x: TangentVec,
    pub grad_y: TangentVec,
}

/// Partial eigenfunction sum and an estimate of the truncation remainder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSum {
    pub value: f64,
    pub remainder: f64,
}

/// Exponential integral E₁(x), x > 0.
pub fn expint_e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x <= 1.0 {
        let mut sum = -EULER_GAMMA - x.ln();
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum -= add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

#[derive(Clone, Debug)]
struct Ewald {
    l: [f64; 2],
    alpha: f64,
    /// Lattice translations n·L used by the real-space sum.
    images: Vec<[f64; 2]>,
    /// Half of the nonzero reciprocal lattice (k and −k are paired), with
    /// weight 2·exp(−k²/4α²)/(k² Vol).
    modes: Vec<([f64; 2], f64)>,
    constant: f64,
}

/// Real-space cutoff in units of 1/α, Fourier cutoff in units of α.
const EWALD_RCUT: f64 = 6.5;
const EWALD_KCUT: f64 = 13.0;
/// exp(−45) ≈ 3e−20: images beyond this contribute nothing in double precision.
const EWALD_SKIP: f64 = 45.0;

impl Ewald {
    fn new(l1: f64, l2: f64) -> Self {
        let vol = l1 * l2;
        let alpha = (PI / vol).sqrt();
        let rcut = EWALD_RCUT / alpha + 0.5 * l1.hypot(l2);
        let (n1, n2) = ((rcut / l1).ceil() as i64, (rcut / l2).ceil() as i64);
        let mut images = Vec::new();
        for a in -n1..=n1 {
            for b in -n2..=n2 {
                let t = [a as f64 * l1, b as f64 * l2];
                if t[0].hypot(t[1]) <= rcut {
                    images.push(t);
                }
            }
        }
        let kcut = EWALD_KCUT * alpha;
        let (m1, m2) = ((kcut * l1 / TAU).ceil() as i64, (kcut * l2 / TAU).ceil() as i64);
        let mut modes = Vec::new();
        for a in 0..=m1 {
            for b in -m2..=m2 {
                if a == 0 && b <= 0 {
                    continue;
                }
                let k = [TAU * a as f64 / l1, TAU * b as f64 / l2];
                let k2 = k[0] * k[0] + k[1] * k[1];
                if k2.sqrt() > kcut {
                    continue;
                }
                modes.push((k, 2.0 * (-k2 / (4.0 * alpha * alpha)).exp() / (k2 * vol)));
            }
        }
        let constant = -1.0 / (4.0 * alpha * alpha * vol);
        Self { l: [l1, l2], alpha, images, modes, constant }
    }

    fn reduce(&self, r: [f64; 2]) -> [f64; 2] {
        [min_image(r[0], self.l[0]), min_image(r[1], self.l[1])]
    }

    /// G at displacement r = x − y (already minimal image).
    fn value(&self, r: [f64; 2]) -> f64 {
        let a2 = self.alpha * self.alpha;
        let mut real = 0.0;
        for t in &self.images {
            let (dx, dy) = (r[0] + t[0], r[1] + t[1]);
            let s = a2 * (dx * dx + dy * dy);
            if s < EWALD_SKIP {
                real += expint_e1(s);
            }
        }
        let mut fourier = 0.0;
        for (k, w) in &self.modes {
            fourier += w * (k[0] * r[0] + k[1] * r[1]).cos();
        }
        real / (4.0 * PI) + self.constant + fourier
    }

    /// ∇_r G.
    fn grad(&self, r: [f64; 2]) -> [f64; 2] {
        let a2 = self.alpha * self.alpha;
        let mut g = [0.0; 2];
        for t in &self.images {
            let (dx, dy) = (r[0] + t[0], r[1] + t[1]);
            let rho2 = dx * dx + dy * dy;
            if a2 * rho2 < EWALD_SKIP {
                let f = -(-a2 * rho2).exp() / (TAU * rho2);
                g[0] += f * dx;
                g[1] += f * dy;
            }
        }
        for (k, w) in &self.modes {
            let s = w * (k[0] * r[0] + k[1] * r[1]).sin();
            g[0] -= s * k[0];
            g[1] -= s * k[1];
        }
        g
    }

    /// Hessian ∂_i∂_j G in r.
    fn hessian(&self, r: [f64; 2]) -> [[f64; 2]; 2] {
        let a2 = self.alpha * self.alpha;
        let mut h = [[0.0; 2]; 2];
        for t in &self.images {
            let d = [r[0] + t[0], r[1] + t[1]];
            let s = d[0] * d[0] + d[1] * d[1];
            if a2 * s < EWALD_SKIP {
                let e = (-a2 * s).exp();
                let g = -e / (TAU * s);
                let gp = e * (a2 / s + 1.0 / (s * s)) / TAU;
                for i in 0..2 {
                    for j in 0..2 {
                        h[i][j] += gp * 2.0 * d[i] * d[j] + if i == j { g } else { 0.0 };
                    }
                }
            }
        }
        for (k, w) in &self.modes {
            let c = w * (k[0] * r[0] + k[1] * r[1]).cos();
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] -= c * k[i] * k[j];
                }
            }
        }
        h
    }

    /// Closed-form diagonal of the regular part, lim_{r→0} G(r) + (1/2π) log|r|.
    fn diagonal(&self) -> f64 {
        let a2 = self.alpha * self.alpha;
        let mut real = 0.0;
        for t in &self.images {
            let s = a2 * (t[0] * t[0] + t[1] * t[1]);
            if s > 0.0 && s < EWALD_SKIP {
                real += expint_e1(s);
            }
        }
        let fourier: f64 = self.modes.iter().map(|(_, w)| w).sum();
        -(EULER_GAMMA + 2.0 * self.alpha.ln()) / (4.0 * PI) + real / (4.0 * PI) + self.constant + fourier
    }
}

/// Green function of one surface with precomputed summation tables.
#[derive(Clone, Debug)]
pub struct GreenFunction {
    surface: Surface,
    ewald: Option<Ewald>,
}

/// Richardson base step for diagonal extrapolation, in units of the surface scale.
pub const DIAG_STEP: f64 = 1e-2;

impl GreenFunction {
    pub fn new(surface: &Surface) -> Result<Self> {
        surface.validate()?;
        let ewald = match *surface {
            Surface::FlatTorus { l1, l2 } => Some(Ewald::new(l1, l2)),
            Surface::Sphere { .. } => None,
        };
        Ok(Self { surface: *surface, ewald })
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    fn coincidence_guard(&self, dist: f64) -> Result<()> {
        if dist <= 1e-9 * self.surface.scale() {
            Err(Error::Coincident(dist))
        } else {
            Ok(())
        }
    }

    pub fn value(&self, x: ChartPoint, y: ChartPoint) -> Result<f64> {
        // fixed argument order, so G(x, y) and G(y, x) round identically
        let (x, y) = if (x.x1, x.x2) <= (y.x1, y.x2) { (x, y) } else { (y, x) };
        match (&self.surface, &self.ewald) {
            (Surface::FlatTorus { .. }, Some(ew)) => {
                let r = ew.reduce([x.x1 - y.x1, x.x2 - y.x2]);
                self.coincidence_guard(r[0].hypot(r[1]))?;
                Ok(ew.value(r))
            }
            (Surface::Sphere { radius }, _) => {
                let d = geodesic_distance(&self.surface, x, y);
                self.coincidence_guard(d)?;
                Ok(sphere_profile(d / radius))
            }
            _ => unreachable!("torus without Ewald tables"),
        }
    }

    /// ∇_x G(x, y) in the frame at x.
    pub fn grad_x(&self, x: ChartPoint, y: ChartPoint) -> Result<TangentVec> {
        match (&self.surface, &self.ewald) {
            (Surface::FlatTorus { .. }, Some(ew)) => {
                let r = ew.reduce([x.x1 - y.x1, x.x2 - y.x2]);
                self.coincidence_guard(r[0].hypot(r[1]))?;
                Ok(TangentVec::new(x, ew.grad(r)))
            }
            (Surface::Sphere { radius }, _) => {
                let d = geodesic_distance(&self.surface, x, y);
                self.coincidence_guard(d)?;
                // f'(π) = 0, and the direction is undefined at the antipode
                if d > radius * (PI - 1e-9) {
                    return Ok(TangentVec::zero(x));
                }
                let lg = log_map(&self.surface, x, y)?;
                // G = f(γ), γ = d/R, and ∇_x d = −log_x(y)/d
                let fp = -(0.25 * FRAC_1_PI) / (0.5 * d / radius).tan();
                Ok(lg.scale(-fp / (radius * d)))
            }
            _ => unreachable!(),
        }
    }

    pub fn eval(&self, x: ChartPoint, y: ChartPoint) -> Result<GreenEval> {
        Ok(GreenEval { value: self.value(x, y)?, grad_x: self.grad_x(x, y)?, grad_y: self.grad_x(y, x)? })
    }

    /// σ(x, a, v) = (∇_a G(x, a), v), v based at a.
    pub fn sigma(&self, x: ChartPoint, a: ChartPoint, v: &TangentVec) -> Result<f64> {
        Ok(self.grad_x(a, x)?.dot(v))
    }

    /// Torus only: ∇_x σ(x, a, v) = −Hess G(x − a)·v.
    pub fn grad_x_sigma(&self, x: ChartPoint, a: ChartPoint, v: &TangentVec) -> Result<[f64; 2]> {
        let ew = self.ewald.as_ref().ok_or(Error::TorusOnly)?;
        let r = ew.reduce([x.x1 - a.x1, x.x2 - a.x2]);
        self.coincidence_guard(r[0].hypot(r[1]))?;
        let h = ew.hessian(r);
        Ok([-(h[0][0] * v.v[0] + h[0][1] * v.v[1]), -(h[1][0] * v.v[0] + h[1][1] * v.v[1])])
    }

    /// Torus only: Hessian of G in its first argument.
    pub fn hessian_x(&self, x: ChartPoint, y: ChartPoint) -> Result<[[f64; 2]; 2]> {
        let ew = self.ewald.as_ref().ok_or(Error::TorusOnly)?;
        let r = ew.reduce([x.x1 - y.x1, x.x2 - y.x2]);
        self.coincidence_guard(r[0].hypot(r[1]))?;
        Ok(ew.hessian(r))
    }

    /// Largest separation at which H is queried off the diagonal.
    pub fn regular_part_limit(&self) -> f64 {
        0.5 * self.surface.injectivity_radius()
    }

    /// H(x, y) = G(x, y) + (1/2π) log dist(x, y), off the diagonal.
    pub fn regular_part(&self, x: ChartPoint, y: ChartPoint) -> Result<f64> {
        let d = geodesic_distance(&self.surface, x, y);
        let limit = self.regular_part_limit();
        if d >= limit {
            return Err(Error::RegularPartDomain { dist: d, limit });
        }
        self.coincidence_guard(d)?;
        match self.surface {
            Surface::Sphere { radius } => {
                // log(Rγ) − log sin(γ/2) written without cancellation
                let half = 0.5 * d / radius;
                Ok((0.5 / PI) * ((2.0 * radius).ln() + (half / half.sin()).ln()) - 0.25 * FRAC_1_PI)
            }
            Surface::FlatTorus { .. } => Ok(self.value(x, y)? + (0.5 / PI) * d.ln()),
        }
    }

    /// H(a, a) by Richardson extrapolation in t² of the symmetric average of
    /// H(a, exp_a(±t τ_k)), t ∈ {t₀, t₀/2, t₀/4}.
    pub fn regular_part_diag(&self, a: ChartPoint) -> Result<f64> {
        let t0 = DIAG_STEP * self.surface.scale();
        let h = |t: f64| -> Result<f64> {
            let mut s = 0.0;
            for v in [[t, 0.0], [-t, 0.0], [0.0, t], [0.0, -t]] {
                s += self.regular_part(a, exp_map(&self.surface, &TangentVec::new(a, v)))?;
            }
            Ok(0.25 * s)
        };
        Ok(richardson3(h(t0)?, h(0.5 * t0)?, h(0.25 * t0)?))
    }

    /// ∇_x H(x, y) at x = y = a. By the symmetry ∇_x H(a,a) = ∇_y H(a,a) it is half the
    /// gradient of a ↦ H(a, a), taken here by central differences along the frame.
    pub fn regular_part_grad_diag(&self, a: ChartPoint) -> Result<TangentVec> {
        self.surface.check_point(a)?;
        let delta = 1e-3 * self.surface.scale();
        let mut g = [0.0; 2];
        for (k, gk) in g.iter_mut().enumerate() {
            let mut v = [0.0; 2];
            v[k] = delta;
            let p = exp_map(&self.surface, &TangentVec::new(a, v));
            v[k] = -delta;
            let m = exp_map(&self.surface, &TangentVec::new(a, v));
            *gk = 0.5 * (self.regular_part_diag(p)? - self.regular_part_diag(m)?) / (2.0 * delta);
        }
        Ok(TangentVec::new(a, g))
    }

    /// Exact torus diagonal constant from the Ewald split (test oracle for the
    /// extrapolated value); None on the sphere.
    pub fn torus_diagonal_exact(&self) -> Option<f64> {
        self.ewald.as_ref().map(Ewald::diagonal)
    }

    /// (1/Vol)∫ G(·, y) vol by quadrature in geodesic polar coordinates about y, with
    /// ρ = ρ_max s² to tame the logarithm. Used to check the zero-mean normalization.
    pub fn mean_over_surface(&self, y: ChartPoint, order: usize) -> Result<f64> {
        let n = NonZeroUsize::new(order.max(2)).expect("nonzero");
        let gl = GaussLegendre::new(n);
        let total = match self.surface {
            Surface::Sphere { radius } => {
                self.surface.check_point(y)?;
                let mut acc = 0.0;
                let nb = 2 * order;
                for ib in 0..nb {
                    let beta = TAU * ib as f64 / nb as f64;
                    let (sb, cb) = beta.sin_cos();
                    let radial = gl.integrate(0.0, 1.0, |s| {
                        let gam = PI * s * s;
                        if gam <= 0.0 || gam >= PI {
                            return 0.0;
                        }
                        let x = exp_map(&self.surface, &TangentVec::new(y, [radius * gam * cb, radius * gam * sb]));
                        let g = self.value(x, y).unwrap_or(0.0);
                        g * radius * radius * gam.sin() * TAU * PI * s
                    });
                    acc += radial / nb as f64;
                }
                acc
            }
            Surface::FlatTorus { l1, l2 } => {
                let (hx, hy) = (0.5 * l1, 0.5 * l2);
                // split the angle at the rectangle corners so ρ_max(β) is smooth per piece
                let c0 = hy.atan2(hx);
                let bounds = [-c0, c0, PI - c0, PI + c0, TAU - c0];
                let mut acc = 0.0;
                for w in bounds.windows(2) {
                    acc += gl.integrate(w[0], w[1], |beta| {
                        let (sb, cb) = beta.sin_cos();
                        let rmax = (hx / cb.abs().max(1e-300)).min(hy / sb.abs().max(1e-300));
                        gl.integrate(0.0, 1.0, |s| {
                            let rho = rmax * s * s;
                            if rho <= 0.0 {
                                return 0.0;
                            }
                            let x = ChartPoint::new(y.x1 + rho * cb, y.x2 + rho * sb);
                            self.value(x, y).unwrap_or(0.0) * rho * 2.0 * rmax * s
                        })
                    });
                }
                acc
            }
        };
        Ok(total / self.surface.volume())
    }
}

/// G on the sphere as a function of γ = dist/R:
/// −(1/2π) log sin(γ/2) − 1/(4π), the constant fixing zero mean for every R.
fn sphere_profile(gamma: f64) -> f64 {
    -(0.5 / PI) * (0.5 * gamma).sin().ln() - 0.25 * FRAC_1_PI
}

fn richardson3(h0: f64, h1: f64, h2: f64) -> f64 {
    let r1 = (4.0 * h1 - h0) / 3.0;
    let r2 = (4.0 * h2 - h1) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

pub fn green_value(s: &Surface, x: ChartPoint, y: ChartPoint) -> Result<f64> {
    GreenFunction::new(s)?.value(x, y)
}

pub fn sigma_derivative(s: &Surface, x: ChartPoint, a: ChartPoint, v: &TangentVec) -> Result<f64> {
    GreenFunction::new(s)?.sigma(x, a, v)
}

pub fn regular_part_h(s: &Surface, x: ChartPoint, y: ChartPoint) -> Result<f64> {
    let gf = GreenFunction::new(s)?;
    if geodesic_distance(s, x, y) == 0.0 {
        gf.regular_part_diag(x)
    } else {
        gf.regular_part(x, y)
    }
}

pub fn regular_part_grad_h(s: &Surface, a: ChartPoint) -> Result<TangentVec> {
    GreenFunction::new(s)?.regular_part_grad_diag(a)
}

/// Curvature potential: −Δψ₀ = −κ + 2πχ/Vol vanishes on both constant-curvature surfaces.
pub fn psi0_value(_s: &Surface, _p: ChartPoint) -> f64 {
    0.0
}

/// Slow eigenfunction expansion of G, independent of the closed forms above.
///
/// Sphere: Σ_{l=1}^{modes} (2l+1) P_l(cos γ) / (4π l(l+1)); the returned value is the
/// mean of the last two partial sums, which damps the oscillating tail.
/// Torus: Σ over (m, n) ≠ 0 of e^{ik·r}/(Vol |k|²), summed in closed form along one
/// lattice direction and truncated at |n| ≤ modes along the other.
pub fn eigen_sum_oracle(s: &Surface, x: ChartPoint, y: ChartPoint, modes: usize) -> OracleSum {
    if modes == 0 {
        return OracleSum { value: 0.0, remainder: f64::INFINITY };
    }
    match *s {
        Surface::Sphere { radius } => {
            let c = (geodesic_distance(s, x, y) / radius).cos();
            let (mut p0, mut p1) = (1.0, c);
            let mut sum = 0.0;
            let mut prev = 0.0;
            for l in 1..=modes {
                if l > 1 {
                    let lf = (l - 1) as f64;
                    let p2 = ((2.0 * lf + 1.0) * c * p1 - lf * p0) / (lf + 1.0);
                    p0 = p1;
                    p1 = p2;
                }
                let lf = l as f64;
                prev = sum;
                sum += (2.0 * lf + 1.0) * p1 / (4.0 * PI * lf * (lf + 1.0));
            }
            OracleSum { value: 0.5 * (sum + prev), remainder: (sum - prev).abs() }
        }
        Surface::FlatTorus { l1, l2 } => {
            let rx = (x.x1 - y.x1).rem_euclid(l1);
            let ry = (x.x2 - y.x2).rem_euclid(l2);
            let gx = rx.min(l1 - rx) / l1;
            let gy = ry.min(l2 - ry) / l2;
            // close the sum along the axis whose offset is the larger fraction
            let (la, lb, ra, rb) = if gx >= gy { (l1, l2, rx, ry) } else { (l2, l1, ry, rx) };
            let vol = l1 * l2;
            let th = TAU * ra / la;
            let mut sum = la * la / (2.0 * PI * PI) * (PI * PI / 6.0 - 0.5 * PI * th + 0.25 * th * th);
            let m = ra.min(la - ra);
            for n in 1..=modes {
                let q = TAU * n as f64 / lb;
                let ratio = ((-q * ra).exp() + (-q * (la - ra)).exp()) / (1.0 - (-q * la).exp());
                sum += 2.0 * (q * rb).cos() * la / (2.0 * q) * ratio;
            }
            let qn = TAU * (modes + 1) as f64 / lb;
            let step = (-TAU * m / lb).exp();
            let tail = la / qn * 2.0 * (-qn * m).exp() / ((1.0 - (-qn * la).exp()) * (1.0 - step).max(1e-300));
            OracleSum { value: sum / vol, remainder: tail / vol }
        }
    }
}
