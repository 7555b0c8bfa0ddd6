//! Rescaled GL heat flow ∂_t w = λ(Δw + ε⁻²(1 − |w|²)w), λ = |log ε|, on the flat torus.
//!
//! Strang splitting: half a reaction step, the full heat step, half a reaction step.
//! Both sub-flows are solved exactly. The reaction keeps the phase and moves ρ² along
//! the logistic curve; the heat step multiplies by exp(−λΔt·σ(k)) with σ the symbol of
//! the 5-point Laplacian, whose kernel is positive, so |w| ≤ 1 is preserved.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{current_j, gl_energy, harmonic_projection, pairwise_sum, GridSpec, TangentField};
use crate::spectral::{laplacian_symbol, Fft2};

/// Relative per-step energy increase above which a warning is logged.
pub const MONOTONE_TOL: f64 = 1e-10;

pub fn default_dt(eps: f64) -> f64 {
    0.1 * eps * eps / eps.ln().abs()
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub field: TangentField,
    pub t: f64,
    pub step: usize,
    pub eps: f64,
    pub dt: f64,
    pub energy: f64,
    /// Σ |log ε|⁻¹ ‖δw/Δt‖² Δt over the steps taken.
    pub dissipated: f64,
    /// Steps where the energy rose by more than MONOTONE_TOL (relative).
    pub monotone_violations: usize,
    pub max_modulus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub t: f64,
    pub energy: f64,
    pub dissipated: f64,
    pub xi: Vec<f64>,
    pub max_modulus: f64,
}

#[derive(Clone, Debug)]
pub struct FlowRun {
    pub diagnostics: Vec<Diagnostic>,
    pub last: FlowState,
    /// max |w| over every step of the run.
    pub max_modulus: f64,
}

impl FlowRun {
    /// |F(T) + dissipated − F(0)| / dissipated.
    pub fn balance_residual(&self) -> f64 {
        let (a, b) = (&self.diagnostics[0], self.diagnostics.last().expect("nonempty"));
        let drop = b.dissipated - a.dissipated;
        (b.energy + drop - a.energy).abs() / drop.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug)]
pub struct GlFlow {
    grid: GridSpec,
    eps: f64,
    lambda: f64,
    dt: f64,
    fft: Fft2,
    heat: Vec<f64>,
}

impl GlFlow {
    pub fn new(grid: &GridSpec, eps: f64, dt: Option<f64>) -> Result<Self> {
        if !grid.surface.is_torus() {
            return Err(Error::TorusOnly);
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("ε = {eps} must lie in (0, 1)")));
        }
        let h = grid.max_edge();
        if eps < 2.0 * h {
            return Err(Error::Resolution { eps, min: 2.0 * h });
        }
        let dt = dt.unwrap_or_else(|| default_dt(eps));
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let lambda = eps.ln().abs();
        let heat = laplacian_symbol(grid).iter().map(|s| (-lambda * dt * s).exp()).collect();
        Ok(Self { grid: *grid, eps, lambda, dt, fft: Fft2::new(grid.n1, grid.n2), heat })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn start(&self, field: TangentField) -> Result<FlowState> {
        if field.grid != self.grid {
            return Err(Error::InvalidGrid("initial field lives on another grid".into()));
        }
        let energy = gl_energy(&field, self.eps)?.total;
        let max_modulus = field.max_modulus();
        Ok(FlowState {
            field,
            t: 0.0,
            step: 0,
            eps: self.eps,
            dt: self.dt,
            energy,
            dissipated: 0.0,
            monotone_violations: 0,
            max_modulus,
        })
    }

    fn react(&self, w: &mut [Complex64], tau: f64) {
        let decay = (-2.0 * self.lambda * tau / (self.eps * self.eps)).exp();
        w.par_iter_mut().for_each(|z| {
            let r2 = z.norm_sqr();
            *z /= (r2 + (1.0 - r2) * decay).sqrt();
        });
    }

    pub fn step(&self, st: &mut FlowState) -> Result<()> {
        let old = st.field.w.clone();
        let w = &mut st.field.w;
        self.react(w, 0.5 * self.dt);
        self.fft.forward(w);
        w.par_iter_mut().zip(self.heat.par_iter()).for_each(|(z, m)| *z *= m);
        self.fft.inverse(w);
        self.react(w, 0.5 * self.dt);
        st.step += 1;
        st.t = st.step as f64 * self.dt;
        if !st.field.is_finite() {
            return Err(Error::Divergence { step: st.step, t: st.t });
        }
        let g = &self.grid;
        let sq: Vec<f64> = old.iter().zip(&st.field.w).map(|(a, b)| (b - a).norm_sqr()).collect();
        let (h1, h2) = g.spacing();
        st.dissipated += pairwise_sum(&sq) * h1 * h2 / (self.lambda * self.dt);
        let e = gl_energy(&st.field, self.eps)?.total;
        if e > st.energy * (1.0 + MONOTONE_TOL) + f64::MIN_POSITIVE {
            st.monotone_violations += 1;
            log::warn!("energy rose at step {}: {} -> {}", st.step, st.energy, e);
        }
        st.energy = e;
        st.max_modulus = st.field.max_modulus();
        Ok(())
    }

    pub fn diagnostic(&self, st: &FlowState) -> Diagnostic {
        Diagnostic {
            t: st.t,
            energy: st.energy,
            dissipated: st.dissipated,
            xi: harmonic_projection(&current_j(&st.field)).xi,
            max_modulus: st.max_modulus,
        }
    }

    /// Integrates to `horizon` (rounded to whole steps), calling `on_snapshot` at t = 0,
    /// every `stride` steps and at the end.
    pub fn run(
        &self,
        initial: TangentField,
        horizon: f64,
        stride: usize,
        mut on_snapshot: impl FnMut(&FlowState) -> Result<()>,
    ) -> Result<FlowRun> {
        let stride = stride.max(1);
        let steps = (horizon / self.dt).round() as usize;
        let mut st = self.start(initial)?;
        let mut diagnostics = vec![self.diagnostic(&st)];
        let mut max_modulus = st.max_modulus;
        on_snapshot(&st)?;
        for k in 1..=steps {
            self.step(&mut st)?;
            max_modulus = max_modulus.max(st.max_modulus);
            if k % stride == 0 || k == steps {
                diagnostics.push(self.diagnostic(&st));
                on_snapshot(&st)?;
            }
        }
        Ok(FlowRun { diagnostics, last: st, max_modulus })
    }
}
