use thiserror::Error;

use crate::densities::ValidationReport;
use crate::solver::SurfaceSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too small: need at least {needed} nodes per axis, got {nx}x{ny}")]
    GridTooSmall { needed: usize, nx: usize, ny: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value at node ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("point ({x}, {y}) lies outside the grid rectangle")]
    OutOfDomain { x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "mu = {mu} violates the integrability condition: int_0^inf s g''(s) ds < inf requires mu > 2"
    )]
    Integrability { mu: f64 },

    #[error("density failed validation: {}", .0.summary())]
    DensityValidation(ValidationReport),

    #[error("slope at infinity g'_inf = {slope} is not 1; rescale the density before normalizing")]
    NonUnitSlope { slope: f64 },

    #[error("normalization left lim[g - t g'] = {limit}, expected 0")]
    NormalizationFailed { limit: f64 },

    #[error("boundary data are not finite at node ({i}, {j})")]
    BoundaryNotFinite { i: usize, j: usize },

    #[error("oracle domain violation: {0}")]
    OracleDomain(String),

    #[error("energy became non-finite at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },

    #[error(
        "solver did not converge after {iterations} iterations (gradient max-norm {grad_norm:e})"
    )]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        best: Box<SurfaceSolution>,
    },

    #[error("target ({x}, {y}) lies outside the image of the grid under Lambda")]
    OutsideImage { x: f64, y: f64 },

    #[error("inverse of Lambda did not converge for target ({x}, {y}); residual {residual:e}")]
    InverseNotConverged { x: f64, y: f64, residual: f64 },

    #[error("anchor node ({i}, {j}) is outside the grid")]
    InvalidAnchor { i: usize, j: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
