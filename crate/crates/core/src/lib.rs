//! Nonparametric μ-surfaces on planar grids.
//!
//! The crate solves the Euler equation `div{ g'(|∇u|)/|∇u| ∇u } = 0` of a convex
//! linear-growth density `g` with Dirichlet data, assembles the asymptotic normal
//! `N̂` and the 1-forms `(α, β, γ) = N̂ ∧ dX`, measures their closedness, integrates
//! the potentials `X* = (a, b, c)` and `E`, and studies the map `Λ = id + ∇E` together
//! with the reparametrization `χ = (Λ⁻¹, u ∘ Λ⁻¹)` and its conformality defect `Θ`.
//!
//! Pipeline, bottom up:
//!
//! * [`densities`]: `g`, `Ξ`, `ϑ`, `h`, `R`, `Θ`, validation and normalization.
//! * [`fields`]: node-centred uniform grids, finite differences, bicubic interpolation.
//! * [`solver`]: damped Newton on the discrete energy, strong residual, exact oracles.
//! * [`forms`]: `N̂`, `α`, `β`, `γ`, the `φ`/`ψ` coefficients and their exterior derivatives.
//! * [`potential`]: line integrals for `a`, `b`, `c`, `E` and positivity of `D²E`.
//! * [`reparam`]: `Λ`, `det DΛ`, `Λ⁻¹`, `χ`, conformality defects and the decay of `Θ`.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over small matrices and stencils read closer to the formulas.
#![allow(clippy::needless_range_loop)]

pub mod convergence;
pub mod densities;
pub mod error;
pub mod fields;
pub mod forms;
pub mod io;
pub mod potential;
pub mod reparam;
pub mod solver;

mod banded;
mod quadrature;

pub use densities::{
    make_builtin, normalize, validate, DensityDiagnostics, DensityKind, DensitySpec, EnergyDensity,
    GrowthBounds, ValidationReport,
};
pub use error::{Error, Result};
pub use fields::{GridSpec, OneFormField, ScalarField};
pub use forms::{assemble_forms, closedness_residuals, ClosednessReport, FormAssembly};
pub use potential::{recover_xstar, Anchor, HessReport, PotentialSet, SignConvention};
pub use reparam::{DecayFit, ReparamResult};
pub use solver::{solve_dirichlet, Boundary, InitialGuess, Oracle, SolveConfig, SurfaceSolution};
