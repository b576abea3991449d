//! Fixtures for the criterion benches in `benches/`.

use musurf_core::solver::oracle_solution;
use musurf_core::{
    assemble_forms, recover_xstar, Anchor, EnergyDensity, GridSpec, Oracle, ReparamResult,
    SignConvention, SurfaceSolution,
};

/// Square `[-1.2, 1.2]²` with `n` nodes per side.
pub fn scherk_grid(n: usize) -> GridSpec {
    GridSpec::square(-1.2, 1.2, n).expect("valid grid")
}

/// Scherk's graph sampled exactly, wrapped with the minimal density.
pub fn scherk_sample(n: usize) -> SurfaceSolution {
    let spec = scherk_grid(n);
    let u = oracle_solution(Oracle::Scherk, &spec).expect("inside the Scherk domain");
    SurfaceSolution::from_field(&EnergyDensity::minimal(), u).expect("finite field")
}

/// `Λ` built from the exact Scherk sample.
pub fn scherk_reparam(n: usize) -> ReparamResult {
    let sol = scherk_sample(n);
    let fa = assemble_forms(&sol).expect("forms");
    let ps = recover_xstar(
        &sol,
        &fa,
        Anchor::lower_left(),
        SignConvention::Reparametrization,
    )
    .expect("potentials");
    ReparamResult::build(&sol, &ps).expect("reparam")
}
