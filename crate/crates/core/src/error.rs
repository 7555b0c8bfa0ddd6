use thiserror::Error;

use crate::geometry::ChartPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("chart singularity: point {0:?} lies on a pole of the colatitude/longitude chart")]
    ChartSingularity(ChartPoint),

    #[error("invalid surface: {0}")]
    InvalidSurface(String),

    #[error("points are {dist:e} apart, outside the injectivity domain (limit {limit:e})")]
    OutsideInjectivity { dist: f64, limit: f64 },

    #[error("coincident points (distance {0:e}): the Green function is singular on the diagonal")]
    Coincident(f64),

    #[error("separation {dist:e} exceeds the regular-part domain (limit {limit:e})")]
    RegularPartDomain { dist: f64, limit: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("loop node ({i}, {j}) has modulus {modulus:.3e} < 1/2; enlarge the loop")]
    LowModulus { i: usize, j: usize, modulus: f64 },

    #[error("inadmissible vortex configuration: {0}")]
    Inadmissible(#[from] Admissibility),

    #[error("harmonic coefficients have length {found}, expected {expected}")]
    HarmonicLength { expected: usize, found: usize },

    #[error("xi is not in the lattice L(a, d): residues {residues:?}")]
    LatticeViolation { residues: Vec<f64> },

    #[error("core not resolved: eps = {eps:e} < 2h = {min:e}")]
    Resolution { eps: f64, min: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical divergence at step {step} (t = {t:e})")]
    Divergence { step: usize, t: f64 },

    #[error("vortices {j} and {k} are {dist:e} apart, below the collision tolerance")]
    NearCollision { j: usize, k: usize, dist: f64 },

    #[error("step size collapsed after {0} halvings")]
    Stiff(usize),

    #[error("operation requires a flat torus")]
    TorusOnly,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

/// Typed reasons a vortex configuration is not in the admissible class.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Admissibility {
    #[error("points and charges have different lengths ({points} vs {charges})")]
    LengthMismatch { points: usize, charges: usize },

    #[error("vortices {j} and {k} coincide (distance {dist:e})")]
    DuplicatePoint { j: usize, k: usize, dist: f64 },

    #[error("total charge {found} differs from the Euler characteristic {expected}")]
    WrongTotalCharge { expected: i32, found: i32 },

    #[error("vortex {0} lies on a chart pole")]
    OnPole(usize),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
