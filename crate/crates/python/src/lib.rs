//! Python bindings. Points are `(x1, x2)` chart tuples: `(x, y)` on the torus,
//! `(colatitude, longitude)` on the sphere. Fields cross the boundary as lists of
//! complex numbers in row-major node order.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use vortexflow::canonical::{energy_expansion, reconstruct_canonical, well_prepared_initial};
use vortexflow::field::{gl_energy, vorticity_field, GridSpec, TangentField};
use vortexflow::flow::{FlowState, GlFlow};
use vortexflow::green::GreenFunction;
use vortexflow::ode::{LimitFlow, OdeState};
use vortexflow::renorm::{nearest_lattice_xi, HarmonicCoeffs, Renormalized, VortexConfig};
use vortexflow::tracker::{detect_with, Refine};
use vortexflow::{ChartPoint, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } | Error::Stiff(_) | Error::Io(_) | Error::Format(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn pt((x1, x2): (f64, f64)) -> ChartPoint {
    ChartPoint::new(x1, x2)
}

fn config(positions: Vec<(f64, f64)>, charges: Vec<i32>) -> PyResult<VortexConfig> {
    if positions.len() != charges.len() {
        return Err(PyValueError::new_err(format!("{} positions for {} charges", positions.len(), charges.len())));
    }
    Ok(VortexConfig::new(positions.into_iter().map(pt).collect(), charges))
}

#[pyclass(name = "Surface", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PySurface(vortexflow::Surface);

#[pymethods]
impl PySurface {
    #[staticmethod]
    #[pyo3(signature = (l1 = 1.0, l2 = 1.0))]
    fn torus(l1: f64, l2: f64) -> PyResult<Self> {
        vortexflow::Surface::torus(l1, l2).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (radius = 1.0))]
    fn sphere(radius: f64) -> PyResult<Self> {
        vortexflow::Surface::sphere(radius).map(Self).map_err(err)
    }

    #[getter]
    fn euler_characteristic(&self) -> i32 {
        self.0.euler_characteristic()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.0.volume()
    }

    #[getter]
    fn is_torus(&self) -> bool {
        self.0.is_torus()
    }

    fn distance(&self, p: (f64, f64), q: (f64, f64)) -> f64 {
        vortexflow::geometry::geodesic_distance(&self.0, pt(p), pt(q))
    }

    fn __repr__(&self) -> String {
        match self.0 {
            vortexflow::Surface::FlatTorus { l1, l2 } => format!("Surface.torus({l1}, {l2})"),
            vortexflow::Surface::Sphere { radius } => format!("Surface.sphere({radius})"),
        }
    }
}

/// Green function G(x, y) of the Laplace–Beltrami operator (zero mean).
#[pyfunction]
fn green(surface: PySurface, x: (f64, f64), y: (f64, f64)) -> PyResult<f64> {
    GreenFunction::new(&surface.0).and_then(|g| g.value(pt(x), pt(y))).map_err(err)
}

/// ∇_x G(x, y) in the orthonormal frame at x.
#[pyfunction]
fn green_gradient(surface: PySurface, x: (f64, f64), y: (f64, f64)) -> PyResult<(f64, f64)> {
    let v = GreenFunction::new(&surface.0).and_then(|g| g.grad_x(pt(x), pt(y))).map_err(err)?;
    Ok((v.v[0], v.v[1]))
}

/// Lattice element nearest to `target` (defaults to 0); empty on the sphere.
#[pyfunction]
#[pyo3(signature = (surface, positions, charges, target = None))]
fn nearest_xi(surface: PySurface, positions: Vec<(f64, f64)>, charges: Vec<i32>, target: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let c = config(positions, charges)?;
    let t = target.map(HarmonicCoeffs::new).unwrap_or_else(|| HarmonicCoeffs::zeros(&surface.0));
    nearest_lattice_xi(&c, &surface.0, &t).map(|x| x.xi).map_err(err)
}

#[pyfunction]
fn renormalized_energy(surface: PySurface, positions: Vec<(f64, f64)>, charges: Vec<i32>, xi: Vec<f64>) -> PyResult<f64> {
    let c = config(positions, charges)?;
    Renormalized::new(&surface.0).and_then(|w| w.value(&c, &HarmonicCoeffs::new(xi), true)).map_err(err)
}

/// ∇_{a_j} W along the lattice constraint, one frame vector per vortex.
#[pyfunction]
fn renormalized_gradient(surface: PySurface, positions: Vec<(f64, f64)>, charges: Vec<i32>, xi: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    let c = config(positions, charges)?;
    let g = Renormalized::new(&surface.0).and_then(|w| w.gradient(&c, &HarmonicCoeffs::new(xi))).map_err(err)?;
    Ok(g.iter().map(|v| (v.v[0], v.v[1])).collect())
}

#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    #[pyo3(get)]
    times: Vec<f64>,
    /// positions[k][j] is vortex j at times[k]
    #[pyo3(get)]
    positions: Vec<Vec<(f64, f64)>>,
    #[pyo3(get)]
    xi: Vec<Vec<f64>>,
    #[pyo3(get)]
    energies: Vec<f64>,
    #[pyo3(get)]
    t_star: Option<f64>,
    #[pyo3(get)]
    energy_balance_residual: f64,
}

/// Gradient flow πa′ = −∇W of the renormalized energy.
#[pyfunction]
#[pyo3(signature = (surface, positions, charges, xi, horizon, dt = 1e-4))]
fn integrate_ode(
    py: Python<'_>,
    surface: PySurface,
    positions: Vec<(f64, f64)>,
    charges: Vec<i32>,
    xi: Vec<f64>,
    horizon: f64,
    dt: f64,
) -> PyResult<PyTrajectory> {
    let c = config(positions, charges)?;
    let s = surface.0;
    let tr = py
        .detach(|| {
            let st = OdeState::new(&s, c, HarmonicCoeffs::new(xi))?;
            LimitFlow::new(&s)?.integrate(&st, horizon, dt)
        })
        .map_err(err)?;
    Ok(PyTrajectory {
        energy_balance_residual: tr.energy_balance_residual(),
        positions: tr.configs.iter().map(|c| c.a.iter().map(|p| (p.x1, p.x2)).collect()).collect(),
        xi: tr.xis.iter().map(|x| x.xi.clone()).collect(),
        times: tr.times,
        energies: tr.energies,
        t_star: tr.t_star,
    })
}

/// A tangent vector field sampled on a node grid.
#[pyclass(name = "Field", from_py_object)]
#[derive(Clone)]
struct PyField(TangentField);

#[pymethods]
impl PyField {
    /// Canonical unit field of (a, d, ξ).
    #[staticmethod]
    fn canonical(surface: PySurface, n1: usize, n2: usize, positions: Vec<(f64, f64)>, charges: Vec<i32>, xi: Vec<f64>) -> PyResult<Self> {
        let g = GridSpec::new(surface.0, n1, n2).map_err(err)?;
        let c = config(positions, charges)?;
        reconstruct_canonical(&c, &HarmonicCoeffs::new(xi), &g).map(Self).map_err(err)
    }

    /// Canonical field with the radial core profile at scale ε.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn well_prepared(
        surface: PySurface,
        n1: usize,
        n2: usize,
        positions: Vec<(f64, f64)>,
        charges: Vec<i32>,
        xi: Vec<f64>,
        eps: f64,
    ) -> PyResult<Self> {
        let g = GridSpec::new(surface.0, n1, n2).map_err(err)?;
        let c = config(positions, charges)?;
        well_prepared_initial(&c, &HarmonicCoeffs::new(xi), eps, &g).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_values(surface: PySurface, n1: usize, n2: usize, values: Vec<Complex64>) -> PyResult<Self> {
        let g = GridSpec::new(surface.0, n1, n2).map_err(err)?;
        if values.len() != g.len() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", g.len(), values.len())));
        }
        Ok(Self(TangentField { grid: g, w: values }))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.grid.n1, self.0.grid.n2)
    }

    fn values(&self) -> Vec<Complex64> {
        self.0.w.clone()
    }

    fn max_modulus(&self) -> f64 {
        self.0.max_modulus()
    }

    fn total_charge(&self) -> i32 {
        vorticity_field(&self.0).total_charge()
    }

    fn energy(&self, eps: f64) -> PyResult<f64> {
        gl_energy(&self.0, eps).map(|e| e.total).map_err(err)
    }

    /// Detected vortices as (x1, x2, charge).
    fn vortices(&self) -> Vec<(f64, f64, i32)> {
        detect_with(&self.0, Refine::Zero).iter().map(|d| (d.position.x1, d.position.x2, d.charge)).collect()
    }
}

/// GL heat flow integrator holding its current state.
#[pyclass(name = "Flow")]
struct PyFlow {
    flow: GlFlow,
    state: FlowState,
}

#[pymethods]
impl PyFlow {
    #[new]
    #[pyo3(signature = (field, eps, dt = None))]
    fn new(field: PyField, eps: f64, dt: Option<f64>) -> PyResult<Self> {
        let flow = GlFlow::new(&field.0.grid, eps, dt).map_err(err)?;
        let state = flow.start(field.0).map_err(err)?;
        Ok(Self { flow, state })
    }

    fn step(&mut self, py: Python<'_>, n: usize) -> PyResult<()> {
        let (flow, state) = (&self.flow, &mut self.state);
        py.detach(|| (0..n).try_for_each(|_| flow.step(state))).map_err(err)
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.flow.dt()
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.state.energy
    }

    #[getter]
    fn dissipated(&self) -> f64 {
        self.state.dissipated
    }

    #[getter]
    fn field(&self) -> PyField {
        PyField(self.state.field.clone())
    }
}

/// Rows (ε, F_ε, log term, W, R) for a strictly decreasing ε list.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn energy_expansion_table(
    py: Python<'_>,
    surface: PySurface,
    n1: usize,
    n2: usize,
    positions: Vec<(f64, f64)>,
    charges: Vec<i32>,
    xi: Vec<f64>,
    eps: Vec<f64>,
) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
    let g = GridSpec::new(surface.0, n1, n2).map_err(err)?;
    let c = config(positions, charges)?;
    let rows = py.detach(|| energy_expansion(&c, &HarmonicCoeffs::new(xi), &eps, &g)).map_err(err)?;
    Ok(rows.iter().map(|r| (r.eps, r.f_eps, r.log_term, r.w, r.r)).collect())
}

/// The fast invariant suite as (name, passed, detail) triples.
#[pyfunction]
fn selftest(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(vortexflow::harness::selftest).into_iter().map(|c| (c.name, c.passed, c.detail)).collect()
}

#[pymodule]
#[pyo3(name = "vortexflow")]
fn vortexflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", vortexflow::VERSION)?;
    m.add_class::<PySurface>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyFlow>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(green, m)?)?;
    m.add_function(wrap_pyfunction!(green_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_xi, m)?)?;
    m.add_function(wrap_pyfunction!(renormalized_energy, m)?)?;
    m.add_function(wrap_pyfunction!(renormalized_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_ode, m)?)?;
    m.add_function(wrap_pyfunction!(energy_expansion_table, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
