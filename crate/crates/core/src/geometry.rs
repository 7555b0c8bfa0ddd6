//! Exact geometry of the round sphere and the flat torus.
//!
//! Frames: on the torus τ₁ = ∂x, τ₂ = ∂y; on the sphere τ₁ = e_θ, τ₂ = e_φ in
//! colatitude/longitude. (τ₁, τ₂) is positively oriented w.r.t. the outward normal
//! on the sphere, and the connection form is 𝒜 = −cosθ dφ so that d𝒜 = κ vol.
//! Tangent vectors are stored by frame components, so `i` is (v¹, v²) ↦ (−v², v¹).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    Sphere { radius: f64 },
    FlatTorus { l1: f64, l2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub x1: f64,
    pub x2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVec {
    pub base: ChartPoint,
    pub v: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub g: [[f64; 2]; 2],
    pub sqrt_det: f64,
}

impl ChartPoint {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }
}

impl TangentVec {
    pub const fn new(base: ChartPoint, v: [f64; 2]) -> Self {
        Self { base, v }
    }

    pub fn zero(base: ChartPoint) -> Self {
        Self { base, v: [0.0; 2] }
    }

    pub fn norm(&self) -> f64 {
        self.v[0].hypot(self.v[1])
    }

    pub fn dot(&self, other: &TangentVec) -> f64 {
        self.v[0] * other.v[0] + self.v[1] * other.v[1]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { base: self.base, v: [s * self.v[0], s * self.v[1]] }
    }
}

fn wrap_period(x: f64, l: f64) -> f64 {
    let r = x.rem_euclid(l);
    if r >= l {
        0.0
    } else {
        r
    }
}

/// Minimal-image representative of `d` modulo `l`, in [−l/2, l/2].
pub fn min_image(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a - TAU * (a / TAU).round();
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

impl Surface {
    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidSurface(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Surface::Sphere { radius })
    }

    pub fn torus(l1: f64, l2: f64) -> Result<Self> {
        if !(l1.is_finite() && l2.is_finite() && l1 > 0.0 && l2 > 0.0) {
            return Err(Error::InvalidSurface(format!("torus periods must be positive, got ({l1}, {l2})")));
        }
        Ok(Surface::FlatTorus { l1, l2 })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Surface::Sphere { radius } => Surface::sphere(radius).map(|_| ()),
            Surface::FlatTorus { l1, l2 } => Surface::torus(l1, l2).map(|_| ()),
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Surface::FlatTorus { .. })
    }

    pub fn euler_characteristic(&self) -> i32 {
        match self {
            Surface::Sphere { .. } => 2,
            Surface::FlatTorus { .. } => 0,
        }
    }

    pub fn genus(&self) -> usize {
        match self {
            Surface::Sphere { .. } => 0,
            Surface::FlatTorus { .. } => 1,
        }
    }

    /// dim Harm¹ = 2𝔤.
    pub fn harmonic_dim(&self) -> usize {
        2 * self.genus()
    }

    pub fn volume(&self) -> f64 {
        match *self {
            Surface::Sphere { radius } => 4.0 * PI * radius * radius,
            Surface::FlatTorus { l1, l2 } => l1 * l2,
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match *self {
            Surface::Sphere { radius } => PI * radius,
            Surface::FlatTorus { l1, l2 } => 0.5 * l1.min(l2),
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Surface::Sphere { radius } => PI * radius,
            Surface::FlatTorus { l1, l2 } => 0.5 * l1.hypot(l2),
        }
    }

    /// Curvature length scale used for relative tolerances.
    pub fn scale(&self) -> f64 {
        match *self {
            Surface::Sphere { radius } => radius,
            Surface::FlatTorus { l1, l2 } => l1.min(l2),
        }
    }

    /// Canonical chart representative: torus coordinates reduced mod periods,
    /// sphere longitude reduced to [0, 2π) and colatitude reflected into [0, π].
    pub fn reduce(&self, p: ChartPoint) -> ChartPoint {
        match *self {
            Surface::FlatTorus { l1, l2 } => ChartPoint::new(wrap_period(p.x1, l1), wrap_period(p.x2, l2)),
            Surface::Sphere { .. } => from_unit(to_unit(p)),
        }
    }

    pub fn check_point(&self, p: ChartPoint) -> Result<()> {
        if !(p.x1.is_finite() && p.x2.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite point {p:?}")));
        }
        if let Surface::Sphere { .. } = self {
            if !(p.x1 > 0.0 && p.x1 < PI) {
                return Err(Error::ChartSingularity(p));
            }
        }
        Ok(())
    }
}

pub fn metric_at(s: &Surface, p: ChartPoint) -> Result<Metric> {
    s.check_point(p)?;
    Ok(match *s {
        Surface::FlatTorus { .. } => Metric { g: [[1.0, 0.0], [0.0, 1.0]], sqrt_det: 1.0 },
        Surface::Sphere { radius } => {
            let r2 = radius * radius;
            let st = p.x1.sin();
            Metric { g: [[r2, 0.0], [0.0, r2 * st * st]], sqrt_det: r2 * st }
        }
    })
}

pub fn gauss_curvature(s: &Surface, _p: ChartPoint) -> f64 {
    match *s {
        Surface::FlatTorus { .. } => 0.0,
        Surface::Sphere { radius } => 1.0 / (radius * radius),
    }
}

pub fn connection_form_at(s: &Surface, p: ChartPoint) -> Result<[f64; 2]> {
    s.check_point(p)?;
    Ok(match s {
        Surface::FlatTorus { .. } => [0.0, 0.0],
        Surface::Sphere { .. } => [0.0, -p.x1.cos()],
    })
}

pub fn rotate90(v: &TangentVec) -> TangentVec {
    TangentVec { base: v.base, v: [-v.v[1], v.v[0]] }
}

pub(crate) fn to_unit(p: ChartPoint) -> [f64; 3] {
    let (st, ct) = p.x1.sin_cos();
    let (sp, cp) = p.x2.sin_cos();
    [st * cp, st * sp, ct]
}

pub(crate) fn from_unit(n: [f64; 3]) -> ChartPoint {
    let rho = n[0].hypot(n[1]);
    let theta = rho.atan2(n[2]);
    let phi = if rho == 0.0 { 0.0 } else { wrap_period(n[1].atan2(n[0]), TAU) };
    ChartPoint::new(theta, phi)
}

/// Orthonormal frame (e_θ, e_φ) at p as ambient unit vectors.
pub(crate) fn sphere_frame(p: ChartPoint) -> ([f64; 3], [f64; 3]) {
    let (st, ct) = p.x1.sin_cos();
    let (sp, cp) = p.x2.sin_cos();
    ([ct * cp, ct * sp, -st], [-sp, cp, 0.0])
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Angle between unit vectors, accurate at both ends of [0, π].
fn unit_angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3(cross3(a, b)).atan2(dot3(a, b))
}

pub fn geodesic_distance(s: &Surface, p: ChartPoint, q: ChartPoint) -> f64 {
    match *s {
        Surface::FlatTorus { l1, l2 } => min_image(q.x1 - p.x1, l1).hypot(min_image(q.x2 - p.x2, l2)),
        Surface::Sphere { radius } => radius * unit_angle(to_unit(p), to_unit(q)),
    }
}

pub fn exp_map(s: &Surface, v: &TangentVec) -> ChartPoint {
    let p = v.base;
    match *s {
        Surface::FlatTorus { .. } => s.reduce(ChartPoint::new(p.x1 + v.v[0], p.x2 + v.v[1])),
        Surface::Sphere { radius } => {
            let len = v.norm();
            if len == 0.0 {
                return p;
            }
            let n = to_unit(p);
            let (e1, e2) = sphere_frame(p);
            let ang = len / radius;
            let (sa, ca) = ang.sin_cos();
            let mut out = [0.0; 3];
            for k in 0..3 {
                let dir = (v.v[0] * e1[k] + v.v[1] * e2[k]) / len;
                out[k] = ca * n[k] + sa * dir;
            }
            from_unit(out)
        }
    }
}

pub fn log_map(s: &Surface, p: ChartPoint, q: ChartPoint) -> Result<TangentVec> {
    match *s {
        Surface::FlatTorus { l1, l2 } => {
            let d = [min_image(q.x1 - p.x1, l1), min_image(q.x2 - p.x2, l2)];
            let (dist, lim) = (d[0].hypot(d[1]), s.injectivity_radius());
            if dist >= lim {
                return Err(Error::OutsideInjectivity { dist, limit: lim });
            }
            Ok(TangentVec::new(p, d))
        }
        Surface::Sphere { radius } => {
            s.check_point(p)?;
            let (n, m) = (to_unit(p), to_unit(q));
            let ang = unit_angle(n, m);
            if ang >= PI * (1.0 - 1e-12) {
                return Err(Error::OutsideInjectivity { dist: radius * ang, limit: radius * PI });
            }
            let (e1, e2) = sphere_frame(p);
            let (c1, c2) = (dot3(m, e1), dot3(m, e2));
            let t = c1.hypot(c2);
            if t == 0.0 {
                return Ok(TangentVec::zero(p));
            }
            let s = radius * ang / t;
            Ok(TangentVec::new(p, [s * c1, s * c2]))
        }
    }
}

/// Transport the frame components of `w`, given at q = exp_p(y), back to p through
/// the inverse differential of exp_p at y. Classical RK4 stages computed in normal
/// coordinates at p need exactly this map. Identity on the torus.
pub fn dexp_inv(s: &Surface, y: &TangentVec, w: [f64; 2]) -> [f64; 2] {
    match *s {
        Surface::FlatTorus { .. } => w,
        Surface::Sphere { radius } => {
            let len = y.norm();
            if len < 1e-14 * radius {
                return w;
            }
            let p = y.base;
            let q = exp_map(s, y);
            let n = to_unit(p);
            let (e1, e2) = sphere_frame(p);
            let (f1, f2) = sphere_frame(q);
            let wa = [0, 1, 2].map(|k| w[0] * f1[k] + w[1] * f2[k]);
            let u = [y.v[0] / len, y.v[1] / len];
            let ua = [0, 1, 2].map(|k| u[0] * e1[k] + u[1] * e2[k]);
            let ang = len / radius;
            // geodesic tangent at q and the transversal direction (common to p and q)
            let (sa, ca) = ang.sin_cos();
            let tq = [0, 1, 2].map(|k| ca * ua[k] - sa * n[k]);
            let bin = cross3(n, ua);
            let radial = dot3(wa, tq);
            let trans = dot3(wa, bin) * ang / sa;
            let out = [0, 1, 2].map(|k| radial * ua[k] + trans * bin[k]);
            [dot3(out, e1), dot3(out, e2)]
        }
    }
}

/// Ambient embedding of a sphere point (radius included).
pub fn sphere_embed(radius: f64, p: ChartPoint) -> [f64; 3] {
    let n = to_unit(p);
    [radius * n[0], radius * n[1], radius * n[2]]
}

/// Antipode on the sphere, period-half translate on the torus.
pub fn antipode(s: &Surface, p: ChartPoint) -> ChartPoint {
    match *s {
        Surface::Sphere { .. } => ChartPoint::new(PI - p.x1, wrap_period(p.x2 + PI, TAU)),
        Surface::FlatTorus { l1, l2 } => s.reduce(ChartPoint::new(p.x1 + 0.5 * l1, p.x2 + 0.5 * l2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn metric_examples() {
        let t = Surface::torus(1.0, 2.0).unwrap();
        let m = metric_at(&t, ChartPoint::new(0.3, 0.4)).unwrap();
        assert_eq!(m.g, [[1.0, 0.0], [0.0, 1.0]]);
        let s = Surface::sphere(2.0).unwrap();
        let m = metric_at(&s, ChartPoint::new(PI / 3.0, 1.0)).unwrap();
        assert!(close(m.g[0][0], 4.0, 1e-14) && close(m.g[1][1], 3.0, 1e-14));
        assert!(close(m.sqrt_det, 4.0 * (PI / 3.0).sin(), 1e-14));
        assert!(matches!(metric_at(&s, ChartPoint::new(0.0, 1.0)), Err(Error::ChartSingularity(_))));
    }

    #[test]
    fn curvature_and_connection() {
        let s = Surface::sphere(2.0).unwrap();
        assert_eq!(gauss_curvature(&s, ChartPoint::new(1.0, 1.0)), 0.25);
        assert_eq!(connection_form_at(&s, ChartPoint::new(PI / 2.0, 0.3)).unwrap()[1].abs() < 1e-16, true);
        let t = Surface::torus(1.0, 1.0).unwrap();
        assert_eq!(gauss_curvature(&t, ChartPoint::new(0.0, 0.0)), 0.0);
        assert_eq!(connection_form_at(&t, ChartPoint::new(0.2, 0.3)).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn discrete_d_connection_matches_curvature_area() {
        // d𝒜 over a small quadrilateral vs κ·area
        let r = 1.7;
        let s = Surface::sphere(r).unwrap();
        let (t0, p0, h) = (0.9, 0.4, 1e-3);
        let a = |t: f64| connection_form_at(&s, ChartPoint::new(t, p0)).unwrap()[1];
        let circulation = a(t0 + h) * h - a(t0) * h;
        // (∮ around θ∈[t0,t0+h], φ∈[p0,p0+h] counterclockwise in (θ, φ))
        let area = r * r * h * (t0.cos() - (t0 + h).cos());
        let kappa = gauss_curvature(&s, ChartPoint::new(t0, p0));
        assert!(((circulation - kappa * area) / (kappa * area)).abs() < 1e-6);
    }

    #[test]
    fn connection_loop_integral_small_circle() {
        // geodesic circle of radius ρ around a point: ∮𝒜 ≈ κ·area (mod 2π the frame winding)
        let s = Surface::sphere(1.0).unwrap();
        let c = ChartPoint::new(1.1, 0.7);
        let rho = 0.05;
        let n = 4000;
        let mut circ = 0.0;
        let pts: Vec<ChartPoint> = (0..=n)
            .map(|k| {
                let a = TAU * k as f64 / n as f64;
                exp_map(&s, &TangentVec::new(c, [rho * a.cos(), rho * a.sin()]))
            })
            .collect();
        for k in 0..n {
            let (p, q) = (pts[k], pts[k + 1]);
            let mid = ChartPoint::new(0.5 * (p.x1 + q.x1), p.x2 + 0.5 * wrap_angle(q.x2 - p.x2));
            circ += connection_form_at(&s, mid).unwrap()[1] * wrap_angle(q.x2 - p.x2);
        }
        // circle around c is not around a pole: ∮𝒜 = ∫d𝒜 = κ·area
        let area = TAU * (1.0 - rho.cos());
        assert!(((circ - area) / area).abs() < 1e-4, "{circ} vs {area}");
    }

    #[test]
    fn distance_examples() {
        let t = Surface::torus(1.0, 1.0).unwrap();
        assert!(close(geodesic_distance(&t, ChartPoint::new(0.1, 0.0), ChartPoint::new(0.9, 0.0)), 0.2, 1e-14));
        let s = Surface::sphere(1.0).unwrap();
        let p = ChartPoint::new(0.7, 0.2);
        assert!(close(geodesic_distance(&s, p, antipode(&s, p)), PI, 1e-14));
        let d = geodesic_distance(&s, ChartPoint::new(PI / 2.0, 0.0), ChartPoint::new(PI / 2.0, PI / 2.0));
        assert!(close(d, PI / 2.0, 1e-14));
    }

    #[test]
    fn rotation_identities() {
        let b = ChartPoint::new(1.0, 1.0);
        let e1 = TangentVec::new(b, [1.0, 0.0]);
        assert_eq!(rotate90(&e1).v, [0.0, 1.0]);
        let v = TangentVec::new(b, [0.3, -1.2]);
        let ii = rotate90(&rotate90(&v));
        assert_eq!(ii.v, [-0.3, 1.2]);
        assert_eq!(rotate90(&v).dot(&v), 0.0);
        assert_eq!(rotate90(&v).norm(), v.norm());
    }

    #[test]
    fn exp_quarter_equator() {
        let s = Surface::sphere(1.0).unwrap();
        let p = ChartPoint::new(PI / 2.0, 0.0);
        let q = exp_map(&s, &TangentVec::new(p, [0.0, PI / 2.0]));
        assert!(close(q.x1, PI / 2.0, 1e-14) && close(q.x2, PI / 2.0, 1e-14));
        let t = Surface::torus(1.0, 1.0).unwrap();
        let q = exp_map(&t, &TangentVec::new(ChartPoint::new(0.9, 0.1), [0.2, -0.3]));
        assert!(close(q.x1, 0.1, 1e-14) && close(q.x2, 0.8, 1e-14));
    }

    #[test]
    fn log_out_of_injectivity() {
        let t = Surface::torus(1.0, 1.0).unwrap();
        assert!(log_map(&t, ChartPoint::new(0.0, 0.0), ChartPoint::new(0.5, 0.0)).is_err());
        let s = Surface::sphere(1.0).unwrap();
        let p = ChartPoint::new(1.0, 0.0);
        assert!(log_map(&s, p, antipode(&s, p)).is_err());
    }

    #[test]
    fn dexp_inv_matches_finite_difference() {
        // d/dt exp_p(y + t z) mapped back by dexp_inv must return z
        let s = Surface::sphere(1.3).unwrap();
        let p = ChartPoint::new(1.2, 0.5);
        let y = TangentVec::new(p, [0.6, -0.4]);
        let z = [0.3, 0.7];
        let h = 1e-6;
        let qp = exp_map(&s, &TangentVec::new(p, [y.v[0] + h * z[0], y.v[1] + h * z[1]]));
        let qm = exp_map(&s, &TangentVec::new(p, [y.v[0] - h * z[0], y.v[1] - h * z[1]]));
        let q = exp_map(&s, &y);
        // velocity at q in q's frame
        let (f1, f2) = sphere_frame(q);
        let (a, b) = (sphere_embed(1.3, qp), sphere_embed(1.3, qm));
        let vel = [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h), (a[2] - b[2]) / (2.0 * h)];
        let w = [dot3(vel, f1), dot3(vel, f2)];
        let back = dexp_inv(&s, &y, w);
        assert!(close(back[0], z[0], 1e-7) && close(back[1], z[1], 1e-7), "{back:?}");
    }
}
