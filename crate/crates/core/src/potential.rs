//! Potentials of the closed forms: `X* = (a, b, c)` and the scalar `E` with `∇E = (b, -a)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GridSpec, OneFormField, ScalarField};
use crate::forms::FormAssembly;
use crate::solver::SurfaceSolution;

/// Gauge node: every potential vanishes there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub i: usize,
    pub j: usize,
}

impl Anchor {
    pub fn lower_left() -> Self {
        Self { i: 0, j: 0 }
    }

    /// Node nearest to `(x, y)`.
    pub fn nearest(spec: &GridSpec, x: f64, y: f64) -> Self {
        let (i, j) = spec.nearest_node(x, y);
        Self { i, j }
    }

    fn check(&self, spec: &GridSpec) -> Result<()> {
        if self.i >= spec.nx || self.j >= spec.ny {
            return Err(Error::InvalidAnchor {
                i: self.i,
                j: self.j,
            });
        }
        Ok(())
    }
}

impl Default for Anchor {
    fn default() -> Self {
        Self::lower_left()
    }
}

/// Which sign ties `X*` to the forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `da = α`, `db = β`: `D²E = [[φ₁, φ₂], [ψ₁, ψ₂]]` is positive definite and `Λ` expansive.
    #[default]
    Reparametrization,
    /// `-d(a, b) = (α, β)`, the sign of the closedness statement `N̂ ∧ dX = -dX*`.
    ExactForm,
}

impl SignConvention {
    fn sign(self) -> f64 {
        match self {
            SignConvention::Reparametrization => 1.0,
            SignConvention::ExactForm => -1.0,
        }
    }
}

/// Potential of a 1-form with the gap between the two staircase paths.
#[derive(Debug, Clone)]
pub struct LineIntegral {
    pub field: ScalarField,
    /// Row-first minus column-first integral at every node.
    pub discrepancy: ScalarField,
    /// Max-norm of `discrepancy`.
    pub path_discrepancy: f64,
}

/// Trapezoid integration of `p dx + q dy` from `anchor`, first along the anchor row and
/// then up each column. The column-first path is computed too and their gap reported.
pub fn integrate_potential(form: &OneFormField, anchor: Anchor) -> Result<LineIntegral> {
    let spec = *form.spec();
    anchor.check(&spec)?;
    let GridSpec { nx, ny, h, .. } = spec;
    // rows[j][i] = ∫ p dx along row j from column anchor.i to column i.
    let rows: Vec<Vec<f64>> = (0..ny)
        .map(|j| cumulative(nx, anchor.i, h, |i| form.p.at(i, j)))
        .collect();
    let cols: Vec<Vec<f64>> = (0..nx)
        .map(|i| cumulative(ny, anchor.j, h, |j| form.q.at(i, j)))
        .collect();
    let mut first = vec![0.0; spec.len()];
    let mut gap = vec![0.0; spec.len()];
    for (i, j) in spec.nodes() {
        let row_first = rows[anchor.j][i] + cols[i][j];
        let col_first = cols[anchor.i][j] + rows[j][i];
        first[spec.index(i, j)] = row_first;
        gap[spec.index(i, j)] = row_first - col_first;
    }
    let discrepancy = ScalarField::from_values(spec, gap)?;
    Ok(LineIntegral {
        field: ScalarField::from_values(spec, first)?,
        path_discrepancy: discrepancy.max_abs(),
        discrepancy,
    })
}

/// Signed cumulative trapezoid of `f` on `0..n`, zero at `origin`.
fn cumulative(n: usize, origin: usize, h: f64, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for k in origin + 1..n {
        out[k] = out[k - 1] + 0.5 * h * (f(k - 1) + f(k));
    }
    for k in (0..origin).rev() {
        out[k] = out[k + 1] - 0.5 * h * (f(k) + f(k + 1));
    }
    out
}

/// Path gaps of the four potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathDiscrepancy {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl PathDiscrepancy {
    pub fn max(&self) -> f64 {
        self.a.max(self.b).max(self.c).max(self.e)
    }
}

#[derive(Debug, Clone)]
pub struct PotentialSet {
    pub a: ScalarField,
    pub b: ScalarField,
    pub c: ScalarField,
    pub e: ScalarField,
    pub anchor: Anchor,
    pub convention: SignConvention,
    pub exx: ScalarField,
    pub exy: ScalarField,
    pub eyy: ScalarField,
    pub path_discrepancy: PathDiscrepancy,
    /// Path gap of `E` at every node.
    pub e_discrepancy: ScalarField,
}

impl PotentialSet {
    pub fn spec(&self) -> &GridSpec {
        self.e.spec()
    }

    /// `max(|E_x - b|, |E_y + a|)` at every node, with the nodal gradient stencil.
    pub fn gradient_mismatch_field(&self) -> Result<ScalarField> {
        let (ex, ey) = self.e.gradient()?;
        let dx = ex.sub(&self.b)?;
        let dy = ey.zip_map(&self.a, |g, a| g + a)?;
        dx.zip_map(&dy, |p, q| p.abs().max(q.abs()))
    }

    /// Max of [`Self::gradient_mismatch_field`] over interior nodes.
    pub fn gradient_mismatch(&self) -> Result<f64> {
        Ok(self.gradient_mismatch_field()?.max_abs_interior(1))
    }
}

/// Integrates `a`, `b`, `c` from the forms, then `E` from `ω = b dx - a dy`.
///
/// Under [`SignConvention::Reparametrization`] `∇b = (φ₁, φ₂)` and `∇a = -(ψ₁, ψ₂)`;
/// the other convention negates `a` and `b`. In both, `-dc = γ`.
pub fn recover_xstar(
    sol: &SurfaceSolution,
    fa: &FormAssembly,
    anchor: Anchor,
    convention: SignConvention,
) -> Result<PotentialSet> {
    if sol.spec() != fa.spec() {
        return Err(Error::GridMismatch);
    }
    let s = convention.sign();
    let ia = integrate_potential(&fa.alpha, anchor)?;
    let ib = integrate_potential(&fa.beta, anchor)?;
    let ic = integrate_potential(&fa.gamma, anchor)?;
    let a = ia.field.map(|v| s * v)?;
    let b = ib.field.map(|v| s * v)?;
    let c = ic.field.map(|v| -v)?;
    let omega = OneFormField::new(b.clone(), a.map(|v| -v)?)?;
    let ie = integrate_potential(&omega, anchor)?;
    let e = ie.field;
    let (exx, exy, eyy) = e.hessian()?;
    Ok(PotentialSet {
        a,
        b,
        c,
        e,
        anchor,
        convention,
        exx,
        exy,
        eyy,
        path_discrepancy: PathDiscrepancy {
            a: ia.path_discrepancy,
            b: ib.path_discrepancy,
            c: ic.path_discrepancy,
            e: ie.path_discrepancy,
        },
        e_discrepancy: ie.discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessReport {
    /// Smallest eigenvalue of the symmetrized analytic `D²E` over interior nodes.
    pub min_eig_min: f64,
    /// Interior nodes where that eigenvalue falls below `(g - t g')(|∇u|) - 10⁻¹⁰`.
    pub bound_violations: usize,
    /// Max-norm of the finite-difference Hessian of `E` minus the analytic matrix, over
    /// nodes at least two rings inside. One ring in, the second differences divide the
    /// O(h²) error of edge values by h² and stay O(1).
    pub fd_mismatch_max: f64,
    /// Smallest `eig_min - (g - t g')` over interior nodes.
    #[serde(skip)]
    pub min_margin: f64,
}

const HESS_BOUND_TOL: f64 = 1e-10;

/// Smallest eigenvalue of the symmetric part of `[[p11, p12], [p21, p22]]`.
pub fn min_eigenvalue_sym(p11: f64, p12: f64, p21: f64, p22: f64) -> f64 {
    let m = 0.5 * (p12 + p21);
    0.5 * (p11 + p22) - (0.5 * (p11 - p22)).hypot(m)
}

pub fn check_hess_e(ps: &PotentialSet, fa: &FormAssembly, sol: &SurfaceSolution) -> HessReport {
    let spec = *sol.spec();
    let s = ps.convention.sign();
    let v = |f: &ScalarField, k: usize| f.values()[k];
    let mut min_eig = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut violations = 0;
    let mut mismatch: f64 = 0.0;
    for (i, j) in spec.nodes() {
        if spec.is_boundary(i, j) {
            continue;
        }
        let k = spec.index(i, j);
        let (p11, p12, p21, p22) = (
            v(&fa.phi1, k),
            v(&fa.phi2, k),
            v(&fa.psi1, k),
            v(&fa.psi2, k),
        );
        let eig = min_eigenvalue_sym(p11, p12, p21, p22);
        let bound = sol.density.bracket(sol.slope(k));
        min_eig = min_eig.min(eig);
        min_margin = min_margin.min(eig - bound);
        if eig < bound - HESS_BOUND_TOL {
            violations += 1;
        }
        let ring = i.min(j).min(spec.nx - 1 - i).min(spec.ny - 1 - j);
        if ring < 2 {
            continue;
        }
        mismatch = mismatch
            .max((v(&ps.exx, k) - s * p11).abs())
            .max((v(&ps.exy, k) - s * p12).abs())
            .max((v(&ps.exy, k) - s * p21).abs())
            .max((v(&ps.eyy, k) - s * p22).abs());
    }
    HessReport {
        min_eig_min: min_eig,
        bound_violations: violations,
        fd_mismatch_max: mismatch,
        min_margin,
    }
}

/// Writes `x,y,a,b,c,E` rows.
pub fn write_potential_csv<W: std::io::Write>(ps: &PotentialSet, w: W) -> Result<()> {
    crate::io::write_fields_csv(w, &[("a", &ps.a), ("b", &ps.b), ("c", &ps.c), ("E", &ps.e)])
}
