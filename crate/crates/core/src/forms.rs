//! The asymptotic normal `N̂` and the 1-forms `α`, `β`, `γ` built from a solution.

use serde::Serialize;

use crate::densities::EnergyDensity;
use crate::error::Result;
use crate::fields::{GridSpec, OneFormField, ScalarField};
use crate::solver::{residual_at, SurfaceSolution};

/// Pointwise coefficient fields of `N̂ ∧ dX`.
#[derive(Debug, Clone)]
pub struct FormAssembly {
    pub nhat1: ScalarField,
    pub nhat2: ScalarField,
    pub nhat3: ScalarField,
    /// `-ψ₁ dx - ψ₂ dy`
    pub alpha: OneFormField,
    /// `φ₁ dx + φ₂ dy`
    pub beta: OneFormField,
    /// `Ξ u_y dx - Ξ u_x dy`
    pub gamma: OneFormField,
    pub phi1: ScalarField,
    pub phi2: ScalarField,
    pub psi1: ScalarField,
    pub psi2: ScalarField,
    /// Largest relative gap between `Ξ(1+u_x²)+ϑ` and `g - Ξ u_y²` (and its `ψ₂` twin).
    pub identity_error: f64,
}

impl FormAssembly {
    pub fn spec(&self) -> &GridSpec {
        self.phi1.spec()
    }
}

/// `N̂ = (-Ξ u_x, -Ξ u_y, Ξ + ϑ)`.
pub fn asymptotic_normal(sol: &SurfaceSolution) -> [ScalarField; 3] {
    let d = &sol.density;
    let spec = *sol.spec();
    let ux = sol.ux.values();
    let uy = sol.uy.values();
    let comp = |f: &dyn Fn(usize) -> f64| ScalarField::from_nodes(spec, f).expect("finite normal");
    [
        comp(&|k| -d.xi(sol.slope(k)) * ux[k]),
        comp(&|k| -d.xi(sol.slope(k)) * uy[k]),
        comp(&|k| {
            let t = sol.slope(k);
            d.xi(t) + d.vartheta(t)
        }),
    ]
}

/// `N̂` at a single gradient.
pub fn normal_at(d: &EnergyDensity, ux: f64, uy: f64) -> [f64; 3] {
    let t = ux.hypot(uy);
    let xi = d.xi(t);
    [-xi * ux, -xi * uy, xi + d.vartheta(t)]
}

pub fn assemble_forms(sol: &SurfaceSolution) -> Result<FormAssembly> {
    let d = &sol.density;
    let spec = *sol.spec();
    let n = spec.len();
    let ux = sol.ux.values();
    let uy = sol.uy.values();

    let mut phi1 = vec![0.0; n];
    let mut phi2 = vec![0.0; n];
    let mut psi2 = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut identity_error: f64 = 0.0;
    for k in 0..n {
        let t = sol.slope(k);
        let xi = d.xi(t);
        let th = d.vartheta(t);
        let g = d.g(t);
        let (a, b) = (ux[k], uy[k]);
        phi1[k] = xi * (1.0 + a * a) + th;
        psi2[k] = xi * (1.0 + b * b) + th;
        phi2[k] = xi * a * b;
        gx[k] = xi * b;
        gy[k] = -xi * a;
        let e1 = (phi1[k] - (g - xi * b * b)).abs() / phi1[k].abs().max(1.0);
        let e2 = (psi2[k] - (g - xi * a * a)).abs() / psi2[k].abs().max(1.0);
        identity_error = identity_error.max(e1).max(e2);
    }
    let f = |v: Vec<f64>| ScalarField::from_values(spec, v);
    let phi1 = f(phi1)?;
    let phi2 = f(phi2)?;
    let psi1 = phi2.clone();
    let psi2 = f(psi2)?;
    let [nhat1, nhat2, nhat3] = asymptotic_normal(sol);
    let neg = |s: &ScalarField| s.map(|v| -v);
    Ok(FormAssembly {
        nhat1,
        nhat2,
        nhat3,
        alpha: OneFormField::new(neg(&psi1)?, neg(&psi2)?)?,
        beta: OneFormField::new(phi1.clone(), phi2.clone())?,
        gamma: OneFormField::new(f(gx)?, f(gy)?)?,
        phi1,
        phi2,
        psi1,
        psi2,
        identity_error,
    })
}

/// Discrete exterior derivatives of `α`, `β`, `γ` on interior nodes.
#[derive(Debug, Clone)]
pub struct ClosednessReport {
    pub d_alpha: ScalarField,
    pub d_beta: ScalarField,
    pub d_gamma: ScalarField,
    /// Max-norms of `dα`, `dβ`, `dγ` over interior nodes.
    pub max_norms: [f64; 3],
    pub grid_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosednessSummary {
    pub h: f64,
    pub max_d_alpha: f64,
    pub max_d_beta: f64,
    pub max_d_gamma: f64,
}

impl ClosednessReport {
    pub fn summary(&self) -> ClosednessSummary {
        ClosednessSummary {
            h: self.grid_h,
            max_d_alpha: self.max_norms[0],
            max_d_beta: self.max_norms[1],
            max_d_gamma: self.max_norms[2],
        }
    }

    /// Max-norms restricted to the nodes of a nested coarse grid, `ring` coarse steps inside.
    pub fn max_norms_on_coarse_nodes(&self, coarse: &GridSpec, ring: usize) -> Result<[f64; 3]> {
        Ok([
            self.d_alpha.max_abs_on_coarse_nodes(coarse, ring)?,
            self.d_beta.max_abs_on_coarse_nodes(coarse, ring)?,
            self.d_gamma.max_abs_on_coarse_nodes(coarse, ring)?,
        ])
    }
}

pub fn closedness_residuals(fa: &FormAssembly) -> Result<ClosednessReport> {
    let d_alpha = fa.alpha.exterior_derivative()?;
    let d_beta = fa.beta.exterior_derivative()?;
    let d_gamma = fa.gamma.exterior_derivative()?;
    let max_norms = [
        d_alpha.max_abs_interior(1),
        d_beta.max_abs_interior(1),
        d_gamma.max_abs_interior(1),
    ];
    Ok(ClosednessReport {
        grid_h: fa.spec().h,
        d_alpha,
        d_beta,
        d_gamma,
        max_norms,
    })
}

/// `dγ = -∂x(Ξ u_x) - ∂y(Ξ u_y)` expanded by the chain rule on the nodal jet.
///
/// Evaluated with `∂t/∂x = (u_x u_xx + u_y u_xy)/t`, i.e. grouped differently from
/// [`residual_at`]; the two must agree to rounding.
pub fn d_gamma_chain_rule(
    d: &EnergyDensity,
    ux: f64,
    uy: f64,
    uxx: f64,
    uxy: f64,
    uyy: f64,
) -> f64 {
    let t = ux.hypot(uy);
    let xi = d.xi(t);
    let k = d.xi_prime_over_t(t);
    // ∂x Ξ = Ξ'(t) ∂x t = k (u_x u_xx + u_y u_xy)
    let dxi_dx = k * (ux * uxx + uy * uxy);
    let dxi_dy = k * (ux * uxy + uy * uyy);
    -(dxi_dx * ux + xi * uxx) - (dxi_dy * uy + xi * uyy)
}

/// Max over interior nodes of `|dγ_chain + residual| / scale`, scale `max(1, |terms|)`.
pub fn chain_rule_consistency(sol: &SurfaceSolution) -> f64 {
    let spec = *sol.spec();
    let v = |f: &ScalarField, k: usize| f.values()[k];
    spec.nodes()
        .filter(|&(i, j)| !spec.is_boundary(i, j))
        .map(|(i, j)| {
            let k = spec.index(i, j);
            let jet = (
                v(&sol.ux, k),
                v(&sol.uy, k),
                v(&sol.uxx, k),
                v(&sol.uxy, k),
                v(&sol.uyy, k),
            );
            let a = d_gamma_chain_rule(&sol.density, jet.0, jet.1, jet.2, jet.3, jet.4);
            let b = residual_at(&sol.density, jet.0, jet.1, jet.2, jet.3, jet.4);
            let scale = 1.0
                + sol.density.xi(sol.slope(k)) * (jet.2.abs() + jet.4.abs())
                + (sol.density.xi_prime_over_t(sol.slope(k))
                    * (jet.0 * jet.0 + jet.1 * jet.1)
                    * (jet.2.abs() + jet.3.abs() + jet.4.abs()))
                .abs();
            (a + b).abs() / scale
        })
        .fold(0.0, f64::max)
}

const IDENTITY_FD_STEP: f64 = 1e-5;

/// Per-`t` relative errors of the density identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityEntry {
    pub t: f64,
    pub vartheta_derivative: f64,
    pub diagonal_coefficient: f64,
    pub mixed_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub entries: Vec<IdentityEntry>,
    pub max_error: f64,
}

/// Checks, by central differences with step `10⁻⁵`:
///
/// * `ϑ'(t) = -[t Ξ + Ξ'(1+t²)]`
/// * diagonal coefficient: `-k(1+u_x²) - ϑ'/t` equals `Ξ + k u_y²`, `k = Ξ'/t`
/// * mixed coefficient: `u_x[-k(1+u_x²) - Ξ - ϑ'/t + k u_y²]` equals `u_y · 2 u_x u_y k`
///
/// over gradients of length `t` at a panel of angles.
pub fn density_identities(d: &EnergyDensity, t_samples: &[f64]) -> IdentityReport {
    let mut entries = Vec::with_capacity(t_samples.len());
    for &t in t_samples {
        let s = IDENTITY_FD_STEP.min(0.5 * t);
        let dvt = (d.vartheta(t + s) - d.vartheta(t - s)) / (2.0 * s);
        let dxi = (d.xi(t + s) - d.xi(t - s)) / (2.0 * s);
        let rhs = -(t * d.xi(t) + dxi * (1.0 + t * t));
        let e13 = rel(dvt, rhs, t * d.xi(t) + (dxi * (1.0 + t * t)).abs());

        let xi = d.xi(t);
        let k = dxi / t;
        let k_exact = d.xi_prime_over_t(t);
        let mut e2: f64 = 0.0;
        let mut e3: f64 = 0.0;
        for a in 0..12 {
            let ang = std::f64::consts::PI * (a as f64 + 0.25) / 6.0;
            let (ux, uy) = (t * ang.cos(), t * ang.sin());
            let t2 = -k * (1.0 + ux * ux) - dvt / t;
            let t2_ref = xi + k_exact * uy * uy;
            e2 = e2.max(rel(t2, t2_ref, xi + (k_exact * uy * uy).abs()));
            let t3 = ux * (-k * (1.0 + ux * ux) - xi - dvt / t + k * uy * uy);
            let t3_ref = uy * (2.0 * ux * uy * k_exact);
            let scale = ux.abs() * (xi + (k_exact * (1.0 + t * t)).abs());
            e3 = e3.max(rel(t3, t3_ref, scale));
        }
        entries.push(IdentityEntry {
            t,
            vartheta_derivative: e13,
            diagonal_coefficient: e2,
            mixed_coefficient: e3,
        });
    }
    let max_error = entries
        .iter()
        .map(|e| {
            e.vartheta_derivative
                .max(e.diagonal_coefficient)
                .max(e.mixed_coefficient)
        })
        .fold(0.0, f64::max);
    IdentityReport { entries, max_error }
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;
    use crate::solver::{oracle_solution, strong_residual, Oracle};
    use proptest::prelude::*;

    fn sol_of(d: &EnergyDensity, n: usize, f: impl Fn(f64, f64) -> f64) -> SurfaceSolution {
        let g = GridSpec::square(-1.0, 1.0, n).unwrap();
        SurfaceSolution::from_field(d, ScalarField::from_fn(g, f).unwrap()).unwrap()
    }

    #[test]
    fn normal_examples() {
        let m = EnergyDensity::minimal();
        assert_eq!(normal_at(&m, 0.0, 0.0), [0.0, 0.0, 1.0]);
        let n = normal_at(&EnergyDensity::mu_family(3.0).unwrap(), 2.0, 0.0);
        assert!((n[0] + 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(n[1], 0.0);
        assert!((n[2] - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn minimal_normal_is_the_gauss_map() {
        let sol = sol_of(&EnergyDensity::minimal(), 11, |x, y| (x * y).sin() + x * x);
        let [n1, n2, n3] = asymptotic_normal(&sol);
        for k in 0..sol.spec().len() {
            let (a, b) = (sol.ux.values()[k], sol.uy.values()[k]);
            let w = (1.0 + a * a + b * b).sqrt();
            let (p, q, r) = (n1.values()[k], n2.values()[k], n3.values()[k]);
            assert!((p + a / w).abs() < 1e-15 && (q + b / w).abs() < 1e-15);
            assert!((r - 1.0 / w).abs() < 1e-14);
            assert!((p * p + q * q + r * r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forms_of_constant_and_linear_graphs() {
        let m = EnergyDensity::minimal();
        let fa = assemble_forms(&sol_of(&m, 7, |_, _| 3.0)).unwrap();
        for k in 0..49 {
            assert_eq!(fa.alpha.p.values()[k], 0.0);
            assert_eq!(fa.alpha.q.values()[k], -1.0);
            assert_eq!(fa.beta.p.values()[k], 1.0);
            assert_eq!(fa.beta.q.values()[k], 0.0);
            assert_eq!(fa.gamma.p.values()[k], 0.0);
            assert_eq!(fa.gamma.q.values()[k], 0.0);
        }
        let fa = assemble_forms(&sol_of(&m, 7, |x, _| x)).unwrap();
        for k in 0..49 {
            assert!(fa.gamma.p.values()[k].abs() < 1e-14);
            assert!((fa.gamma.q.values()[k] + 0.5f64.sqrt()).abs() < 1e-14);
        }
        let r = closedness_residuals(&fa).unwrap();
        assert!(r.max_norms.iter().all(|v| *v < 1e-12), "{:?}", r.max_norms);
    }

    #[test]
    fn affine_forms_are_closed_to_rounding() {
        let d = EnergyDensity::mu_family(2.5).unwrap();
        let fa = assemble_forms(&sol_of(&d, 9, |x, y| 1.7 * x - 0.4 * y + 2.0)).unwrap();
        let r = closedness_residuals(&fa).unwrap();
        assert!(r.max_norms.iter().all(|v| *v < 1e-12), "{:?}", r.max_norms);
    }

    #[test]
    fn converse_detection_at_origin() {
        let m = EnergyDensity::minimal();
        for n in [21, 41, 81] {
            let sol = sol_of(&m, n, |x, y| x * x + y * y);
            let r = closedness_residuals(&assemble_forms(&sol).unwrap()).unwrap();
            let c = n / 2;
            assert!((r.d_gamma.at(c, c) + 4.0).abs() < 0.2);
        }
    }

    #[test]
    fn d_gamma_tends_to_minus_residual() {
        let d = EnergyDensity::mu_family(3.0).unwrap();
        let gap = |n| {
            let sol = sol_of(&d, n, |x, y| (x + 0.3 * y).sin() + 0.5 * x * y);
            let dg = closedness_residuals(&assemble_forms(&sol).unwrap())
                .unwrap()
                .d_gamma;
            let r = strong_residual(&sol);
            dg.zip_map(&r, |a, b| a + b).unwrap().max_abs_interior(2)
        };
        let (a, b) = (gap(33), gap(65));
        assert!((a / b).log2() > 1.5, "{a} {b}");
        let sol = sol_of(&d, 33, |x, y| (x + 0.3 * y).sin() + 0.5 * x * y);
        assert!(chain_rule_consistency(&sol) < 1e-12);
    }

    #[test]
    fn scherk_closedness_converges() {
        let m = EnergyDensity::minimal();
        let norms = |n| {
            let g = GridSpec::square(-1.2, 1.2, n).unwrap();
            let sol = SurfaceSolution::from_field(&m, oracle_solution(Oracle::Scherk, &g).unwrap())
                .unwrap();
            let coarse = GridSpec::square(-1.2, 1.2, 17).unwrap();
            closedness_residuals(&assemble_forms(&sol).unwrap())
                .unwrap()
                .max_norms_on_coarse_nodes(&coarse, 2)
                .unwrap()
        };
        let (a, b) = (norms(33), norms(65));
        for k in 0..3 {
            let r = a[k] / b[k];
            assert!((r / 4.0 - 1.0).abs() < 0.3, "form {k}: ratio {r}");
        }
    }

    #[test]
    fn identity_examples() {
        let ts = [0.5, 1.0, 2.0, 5.0];
        for d in [
            EnergyDensity::minimal(),
            EnergyDensity::mu_family(3.0).unwrap(),
        ] {
            let r = density_identities(&d, &ts);
            assert!(r.max_error <= 1e-6, "{:?}", r);
        }
        let r = density_identities(&EnergyDensity::mu_family(2.5).unwrap(), &[10.0]);
        assert!(r.max_error <= 1e-6);
    }

    #[test]
    fn closedness_summary_json_keys() {
        let fa = assemble_forms(&sol_of(&EnergyDensity::minimal(), 7, |x, _| x)).unwrap();
        let s = serde_json::to_value(closedness_residuals(&fa).unwrap().summary()).unwrap();
        let keys: Vec<&String> = s.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 4);
        for k in ["h", "max_d_alpha", "max_d_beta", "max_d_gamma"] {
            assert!(s.get(k).is_some());
        }
    }

    proptest! {
        #[test]
        fn phi_psi_identities(ux in -30.0f64..30.0, uy in -30.0f64..30.0, which in 0usize..3) {
            let d = [
                EnergyDensity::minimal(),
                EnergyDensity::mu_family(2.5).unwrap(),
                EnergyDensity::mu_family(3.0).unwrap(),
            ][which].clone();
            let sol = sol_of(&d, 5, |x, y| ux * x + uy * y);
            let fa = assemble_forms(&sol).unwrap();
            prop_assert!(fa.identity_error <= 1e-12);
            prop_assert_eq!(fa.psi1.values(), fa.phi2.values());
        }

        #[test]
        fn chain_rule_matches_expansion(jet in proptest::array::uniform5(-20.0f64..20.0)) {
            let d = EnergyDensity::mu_family(3.0).unwrap();
            let a = d_gamma_chain_rule(&d, jet[0], jet[1], jet[2], jet[3], jet[4]);
            let b = residual_at(&d, jet[0], jet[1], jet[2], jet[3], jet[4]);
            let scale = 1.0 + jet.iter().map(|v| v.abs()).sum::<f64>().powi(2);
            prop_assert!((a + b).abs() <= 1e-12 * scale);
        }
    }
}
