//! The map `Λ = id + ∇E`, its inverse, the reparametrization `χ = (Λ⁻¹, u ∘ Λ⁻¹)` and
//! the conformality defect `Θ`.
//!
//! With `B = g - t g'`, the Jacobian is `DΛ = [[1+φ₁, φ₂], [ψ₁, 1+ψ₂]]` and
//! `det DΛ = (1 + B)(1 + B + Ξ t²)`. The columns of `Dχ · det DΛ` are
//!
//! ```text
//! X = (1 + g - Ξ u_x², -Ξ u_x u_y, u_x (1 + B))
//! Y = (-Ξ u_x u_y, 1 + g - Ξ u_y², u_y (1 + B))
//! ```
//!
//! and `X·Y = u_x u_y Θ`, `|X|² - |Y|² = (u_x² - u_y²) Θ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::densities::{least_squares_slope, EnergyDensity};
use crate::error::{Error, Result};
use crate::fields::{GridSpec, ScalarField};
use crate::potential::{PotentialSet, SignConvention};
use crate::solver::SurfaceSolution;

const INVERSE_TOL: f64 = 1e-10;
const INVERSE_MAX_ITERS: usize = 50;
const CHI_FD_STEP: f64 = 1e-5;
const ZERO_THETA: f64 = 1e-12;

/// `X`, `Y`, `det DΛ` and `Θ` at one gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConformalFrame {
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub det: f64,
    pub theta: f64,
}

pub fn frame_at(d: &EnergyDensity, ux: f64, uy: f64) -> ConformalFrame {
    let t = ux.hypot(uy);
    let xi = d.xi(t);
    let g = d.g(t);
    let b = d.bracket(t);
    let m = -xi * ux * uy;
    ConformalFrame {
        x: [1.0 + g - xi * ux * ux, m, ux * (1.0 + b)],
        y: [m, 1.0 + g - xi * uy * uy, uy * (1.0 + b)],
        det: det_closed_form(d, t),
        theta: d.theta(t),
    }
}

/// `(1 + B)(1 + B + Ξ t²)`, the determinant of `[[1+φ₁, φ₂], [ψ₁, 1+ψ₂]]`.
pub fn det_closed_form(d: &EnergyDensity, t: f64) -> f64 {
    let b = d.bracket(t);
    (1.0 + b) * (1.0 + b + t * d.g1(t))
}

/// `1 + Ξ(1 + t²)`.
pub fn det_lower_bound(d: &EnergyDensity, t: f64) -> f64 {
    1.0 + d.xi(t) * (1.0 + t * t)
}

/// `DΛ` from the form coefficients at one gradient.
pub fn jacobian_at(d: &EnergyDensity, ux: f64, uy: f64) -> [[f64; 2]; 2] {
    let t = ux.hypot(uy);
    let xi = d.xi(t);
    let th = d.vartheta(t);
    let phi1 = xi * (1.0 + ux * ux) + th;
    let psi2 = xi * (1.0 + uy * uy) + th;
    let off = xi * ux * uy;
    [[1.0 + phi1, off], [off, 1.0 + psi2]]
}

/// Max-norm of `Π DΛ / det DΛ - I` with `Π = adj DΛ` and the closed-form determinant.
pub fn inverse_jacobian_error(d: &EnergyDensity, ux: f64, uy: f64) -> f64 {
    let j = jacobian_at(d, ux, uy);
    let pi = [[j[1][1], -j[0][1]], [-j[1][0], j[0][0]]];
    let det = det_closed_form(d, ux.hypot(uy));
    let mut e: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let v = (pi[r][0] * j[0][c] + pi[r][1] * j[1][c]) / det;
            let id = if r == c { 1.0 } else { 0.0 };
            e = e.max((v - id).abs());
        }
    }
    e
}

/// Residuals of the two conformality identities at one gradient, scaled by `max(1, |X||Y|)`.
pub fn defect_residuals_at(d: &EnergyDensity, ux: f64, uy: f64) -> (f64, f64) {
    let f = frame_at(d, ux, uy);
    let dot = f.x[0] * f.y[0] + f.x[1] * f.y[1] + f.x[2] * f.y[2];
    let nx2 = f.x.iter().map(|v| v * v).sum::<f64>();
    let ny2 = f.y.iter().map(|v| v * v).sum::<f64>();
    let scale = (nx2 * ny2).sqrt().max(1.0);
    let r_dot = (dot - ux * uy * f.theta) / scale;
    let r_diff = ((nx2 - ny2) - (ux * ux - uy * uy) * f.theta) / scale;
    (r_dot, r_diff)
}

pub fn lambda_map(ps: &PotentialSet) -> Result<(ScalarField, ScalarField)> {
    let spec = *ps.spec();
    let l1 = ScalarField::from_nodes(spec, |k| spec.x(k % spec.nx) + ps.b.values()[k])?;
    let l2 = ScalarField::from_nodes(spec, |k| spec.y(k / spec.nx) - ps.a.values()[k])?;
    Ok((l1, l2))
}

/// Closed-form `det DΛ` at every node.
pub fn det_dlambda(sol: &SurfaceSolution) -> ScalarField {
    let spec = *sol.spec();
    ScalarField::from_nodes(spec, |k| det_closed_form(&sol.density, sol.slope(k)))
        .expect("finite determinant")
}

/// `det` of the finite-difference Jacobian of `(λ₁, λ₂)`.
pub fn det_dlambda_fd(l1: &ScalarField, l2: &ScalarField) -> Result<ScalarField> {
    let (a, b) = l1.gradient()?;
    let (c, e) = l2.gradient()?;
    let ab = a.zip_map(&e, |p, q| p * q)?;
    let cd = b.zip_map(&c, |p, q| p * q)?;
    ab.sub(&cd)
}

/// Conformality-defect fields.
#[derive(Debug, Clone)]
pub struct DefectFields {
    /// `(X·Y - u_x u_y Θ) / max(1, |X||Y|)`
    pub dot: ScalarField,
    /// `(|X|² - |Y|² - (u_x² - u_y²) Θ) / max(1, |X||Y|)`
    pub diff: ScalarField,
    /// `X·Y / (det DΛ)²`
    pub scaled_dot: ScalarField,
    /// `(|X|² - |Y|²) / (det DΛ)²`
    pub scaled_diff: ScalarField,
}

pub fn conformality_defect(sol: &SurfaceSolution) -> DefectFields {
    let spec = *sol.spec();
    let d = &sol.density;
    let n = spec.len();
    let rows: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (ux, uy) = (sol.ux.values()[k], sol.uy.values()[k]);
            let (r1, r2) = defect_residuals_at(d, ux, uy);
            let f = frame_at(d, ux, uy);
            let dot = f.x[0] * f.y[0] + f.x[1] * f.y[1] + f.x[2] * f.y[2];
            let diff =
                f.x.iter().map(|v| v * v).sum::<f64>() - f.y.iter().map(|v| v * v).sum::<f64>();
            let d2 = f.det * f.det;
            [r1, r2, dot / d2, diff / d2]
        })
        .collect();
    let col = |c: usize| {
        ScalarField::from_values(spec, rows.iter().map(|r| r[c]).collect()).expect("finite defect")
    };
    DefectFields {
        dot: col(0),
        diff: col(1),
        scaled_dot: col(2),
        scaled_diff: col(3),
    }
}

/// One point of the decay study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecaySample {
    pub t: f64,
    pub theta: f64,
    pub fit_envelope: f64,
}

/// Log-log slope of `|Θ|` on the upper decade and the envelope `d₁ t^{2-μ} + d₂ t⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub d1: f64,
    pub d2: f64,
    pub mu: f64,
    pub identically_zero: bool,
    #[serde(skip)]
    pub samples: Vec<DecaySample>,
}

/// Fits the decay of `Θ` on `n_samples` log-spaced points of `[t_min, t_max]`, `t_min ≥ 1`.
pub fn decay_fit(d: &EnergyDensity, t_range: (f64, f64), n_samples: usize) -> Result<DecayFit> {
    let (t0, t1) = t_range;
    if !(t0 >= 1.0 && t1 > t0 && t1.is_finite()) || n_samples < 3 {
        return Err(Error::InvalidParameter(format!(
            "decay fit needs 1 <= t_min < t_max and at least 3 samples, got [{t0}, {t1}] with {n_samples}"
        )));
    }
    let (l0, l1) = (t0.ln(), t1.ln());
    let ts: Vec<f64> = (0..n_samples)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (n_samples - 1) as f64).exp())
        .collect();
    let thetas: Vec<f64> = ts.iter().map(|&t| d.theta(t)).collect();
    let peak = thetas.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let upper: Vec<(f64, f64)> = ts
        .iter()
        .zip(&thetas)
        .filter(|(t, th)| **t >= t1 / 10.0 && th.abs() > 0.0)
        .map(|(t, th)| (t.ln(), th.abs().ln()))
        .collect();
    let identically_zero = peak <= ZERO_THETA;
    let slope = if identically_zero || upper.len() < 2 {
        f64::NAN
    } else {
        least_squares_slope(&upper)
    };
    let mu = d
        .mu_exponent()
        .unwrap_or(if slope < 0.0 { 2.0 - slope } else { 3.0 });

    let a: Vec<f64> = ts.iter().map(|t| t.powf(2.0 - mu)).collect();
    let b: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
    let abs: Vec<f64> = thetas.iter().map(|v| v.abs()).collect();
    let (d1, d2) = if identically_zero {
        (0.0, 0.0)
    } else {
        smallest_envelope(&a, &b, &abs)
    };
    let samples = ts
        .iter()
        .zip(&thetas)
        .zip(a.iter().zip(&b))
        .map(|((&t, &theta), (&ai, &bi))| DecaySample {
            t,
            theta,
            fit_envelope: d1 * ai + d2 * bi,
        })
        .collect();
    Ok(DecayFit {
        slope,
        d1,
        d2,
        mu,
        identically_zero,
        samples,
    })
}

/// Minimizes `d₁ + d₂` over `d₁, d₂ ≥ 0` with `d₁ aᵢ + d₂ bᵢ ≥ yᵢ` for all `i`.
///
/// `d₂(d₁) = max(0, maxᵢ (yᵢ - d₁ aᵢ)/bᵢ)` is convex, so the objective is minimized by
/// golden-section search on `d₁`.
fn smallest_envelope(a: &[f64], b: &[f64], y: &[f64]) -> (f64, f64) {
    let d2_of = |d1: f64| {
        a.iter()
            .zip(b)
            .zip(y)
            .map(|((ai, bi), yi)| (yi - d1 * ai) / bi)
            .fold(0.0f64, f64::max)
    };
    let hi = a
        .iter()
        .zip(y)
        .map(|(ai, yi)| yi / ai)
        .fold(0.0f64, f64::max);
    let obj = |d1: f64| d1 + d2_of(d1);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut up) = (0.0, hi);
    let mut x1 = up - phi * (up - lo);
    let mut x2 = lo + phi * (up - lo);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    for _ in 0..200 {
        if f1 <= f2 {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - phi * (up - lo);
            f1 = obj(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (up - lo);
            f2 = obj(x2);
        }
    }
    // Compare with the two axis vertices so the golden search cannot miss an endpoint optimum.
    let cands = [0.5 * (lo + up), 0.0, hi];
    let best = cands
        .iter()
        .copied()
        .min_by(|p, q| obj(*p).total_cmp(&obj(*q)))
        .unwrap();
    (best, d2_of(best))
}

/// One sampled point of `χ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSample {
    pub xhat: f64,
    pub yhat: f64,
    pub chi: [f64; 3],
}

/// `χ`, its closed-form Jacobian columns and the finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiJet {
    pub chi: [f64; 3],
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub det: f64,
    /// Max-norm of the FD Jacobian of `χ` minus `(X Y) / det DΛ`.
    pub fd_mismatch: f64,
}

/// `Λ` on the grid with everything needed to invert it and sample `χ`.
#[derive(Debug, Clone)]
pub struct ReparamResult {
    pub lambda1: ScalarField,
    pub lambda2: ScalarField,
    pub det_dl: ScalarField,
    /// Max over interior nodes of `|det(FD Jacobian of Λ) - det DΛ|`.
    pub det_fd_mismatch: f64,
    /// `[x_min, x_max, y_min, y_max]` of `Λ(grid)`.
    pub image_bounds: [f64; 4],
    pub chi_samples: Vec<ChiSample>,
    pub defect_dot: ScalarField,
    pub defect_diff: ScalarField,
    pub decay: Option<DecayFit>,
    /// Nodes where `det DΛ < 1 + Ξ(1 + t²)`.
    pub det_bound_violations: usize,
    /// `c = min det DΛ / (1 + t)` over nodes.
    pub linear_growth_constant: f64,
    pub linear_growth_violations: usize,
    density: EnergyDensity,
    u: ScalarField,
    ux: ScalarField,
    uy: ScalarField,
    jac: [ScalarField; 4],
}

impl ReparamResult {
    pub fn build(sol: &SurfaceSolution, ps: &PotentialSet) -> Result<Self> {
        if ps.convention != SignConvention::Reparametrization {
            return Err(Error::InvalidParameter(
                "Lambda needs potentials in the reparametrization sign convention".into(),
            ));
        }
        if sol.spec() != ps.spec() {
            return Err(Error::GridMismatch);
        }
        let spec = *sol.spec();
        let d = &sol.density;
        let (lambda1, lambda2) = lambda_map(ps)?;
        let det_dl = det_dlambda(sol);
        let det_fd = det_dlambda_fd(&lambda1, &lambda2)?;
        let det_fd_mismatch = det_fd.sub(&det_dl)?.max_abs_interior(1);

        let fold = |f: &ScalarField| {
            f.values()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (x0, x1) = fold(&lambda1);
        let (y0, y1) = fold(&lambda2);

        let mut det_bound_violations = 0;
        let mut c = f64::INFINITY;
        for k in 0..spec.len() {
            let t = sol.slope(k);
            let det = det_dl.values()[k];
            if det < det_lower_bound(d, t) {
                det_bound_violations += 1;
            }
            c = c.min(det / (1.0 + t));
        }
        let linear_growth_violations = (0..spec.len())
            .filter(|&k| det_dl.values()[k] < c * (1.0 + sol.slope(k)))
            .count();

        let entries: Vec<[[f64; 2]; 2]> = (0..spec.len())
            .map(|k| jacobian_at(d, sol.ux.values()[k], sol.uy.values()[k]))
            .collect();
        let jf = |r: usize, s: usize| {
            ScalarField::from_values(spec, entries.iter().map(|m| m[r][s]).collect())
        };
        let defects = conformality_defect(sol);
        Ok(Self {
            lambda1,
            lambda2,
            det_dl,
            det_fd_mismatch,
            image_bounds: [x0, x1, y0, y1],
            chi_samples: Vec::new(),
            defect_dot: defects.dot,
            defect_diff: defects.diff,
            decay: None,
            det_bound_violations,
            linear_growth_constant: c,
            linear_growth_violations,
            density: d.clone(),
            u: sol.u.clone(),
            ux: sol.ux.clone(),
            uy: sol.uy.clone(),
            jac: [jf(0, 0)?, jf(0, 1)?, jf(1, 0)?, jf(1, 1)?],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.lambda1.spec()
    }

    /// Bicubic `Λ(x, y)`.
    pub fn lambda_at(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok([
            self.lambda1.interpolate(x, y)?,
            self.lambda2.interpolate(x, y)?,
        ])
    }

    fn jacobian_interp(&self, x: f64, y: f64) -> Result<[[f64; 2]; 2]> {
        Ok([
            [
                self.jac[0].interpolate(x, y)?,
                self.jac[1].interpolate(x, y)?,
            ],
            [
                self.jac[2].interpolate(x, y)?,
                self.jac[3].interpolate(x, y)?,
            ],
        ])
    }

    /// Nodal `Λ` at node `(i, j)`.
    pub fn lambda_node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lambda1.at(i, j), self.lambda2.at(i, j)]
    }

    /// Solves `Λ(x, y) = target` by Newton with the interpolated analytic Jacobian.
    pub fn inverse(&self, target: [f64; 2]) -> Result<[f64; 2]> {
        lambda_inverse(self, target)
    }

    /// Appends `χ` at each target; targets that fail to invert are returned as errors.
    pub fn sample_chi(&mut self, targets: &[[f64; 2]]) -> Result<()> {
        let samples: Result<Vec<ChiSample>> = targets
            .par_iter()
            .map(|&t| {
                let jet = chi_and_jacobian(self, t)?;
                Ok(ChiSample {
                    xhat: t[0],
                    yhat: t[1],
                    chi: jet.chi,
                })
            })
            .collect();
        self.chi_samples.extend(samples?);
        Ok(())
    }

    /// Writes `x,y,lambda1,lambda2,det_dl,det_bound_margin,linear_growth_margin`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let spec = *self.spec();
        let d = &self.density;
        let slope = |k: usize| self.ux.values()[k].hypot(self.uy.values()[k]);
        let bound = ScalarField::from_nodes(spec, |k| {
            self.det_dl.values()[k] - det_lower_bound(d, slope(k))
        })?;
        let linear = ScalarField::from_nodes(spec, |k| {
            self.det_dl.values()[k] - self.linear_growth_constant * (1.0 + slope(k))
        })?;
        crate::io::write_fields_csv(
            w,
            &[
                ("lambda1", &self.lambda1),
                ("lambda2", &self.lambda2),
                ("det_dl", &self.det_dl),
                ("det_bound_margin", &bound),
                ("linear_growth_margin", &linear),
            ],
        )
    }

    /// Writes `xhat,yhat,chi1,chi2,chi3`.
    pub fn write_chi_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .chi_samples
            .iter()
            .map(|s| vec![s.xhat, s.yhat, s.chi[0], s.chi[1], s.chi[2]])
            .collect();
        crate::io::write_rows_csv(w, &["xhat", "yhat", "chi1", "chi2", "chi3"], &rows)
    }
}

pub fn lambda_inverse(rr: &ReparamResult, target: [f64; 2]) -> Result<[f64; 2]> {
    let [bx0, bx1, by0, by1] = rr.image_bounds;
    let [tx, ty] = target;
    if !(tx >= bx0 && tx <= bx1 && ty >= by0 && ty <= by1) {
        return Err(Error::OutsideImage { x: tx, y: ty });
    }
    let spec = *rr.spec();
    let (i0, j0) = spec
        .nodes()
        .min_by(|&(i, j), &(k, l)| {
            let p = rr.lambda_node(i, j);
            let q = rr.lambda_node(k, l);
            let dp = (p[0] - tx).hypot(p[1] - ty);
            let dq = (q[0] - tx).hypot(q[1] - ty);
            dp.total_cmp(&dq)
        })
        .expect("grid has nodes");
    let mut p = [spec.x(i0), spec.y(j0)];
    let mut residual = f64::INFINITY;
    for _ in 0..=INVERSE_MAX_ITERS {
        let l = rr.lambda_at(p[0], p[1])?;
        let r = [l[0] - tx, l[1] - ty];
        residual = r[0].hypot(r[1]);
        if residual <= INVERSE_TOL {
            return Ok(p);
        }
        let j = rr.jacobian_interp(p[0], p[1])?;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let dx = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let dy = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        p = [
            (p[0] - dx).clamp(spec.x0, spec.x1),
            (p[1] - dy).clamp(spec.y0, spec.y1),
        ];
    }
    Err(Error::InverseNotConverged {
        x: tx,
        y: ty,
        residual,
    })
}

pub fn chi_and_jacobian(rr: &ReparamResult, target: [f64; 2]) -> Result<ChiJet> {
    let chi_of = |t: [f64; 2]| -> Result<[f64; 3]> {
        let p = lambda_inverse(rr, t)?;
        Ok([p[0], p[1], rr.u.interpolate(p[0], p[1])?])
    };
    let chi = chi_of(target)?;
    let ux = rr.ux.interpolate(chi[0], chi[1])?;
    let uy = rr.uy.interpolate(chi[0], chi[1])?;
    let f = frame_at(&rr.density, ux, uy);

    let h = CHI_FD_STEP;
    let mut mismatch: f64 = 0.0;
    for (axis, col) in [(0, f.x), (1, f.y)] {
        let mut tp = target;
        let mut tm = target;
        tp[axis] += h;
        tm[axis] -= h;
        // Near the hull edge fall back to a one-sided difference.
        let (cp, cm, span) = match (chi_of(tp), chi_of(tm)) {
            (Ok(a), Ok(b)) => (a, b, 2.0 * h),
            (Ok(a), Err(_)) => (a, chi, h),
            (Err(_), Ok(b)) => (chi, b, h),
            (Err(e), Err(_)) => return Err(e),
        };
        for r in 0..3 {
            let fd = (cp[r] - cm[r]) / span;
            mismatch = mismatch.max((fd - col[r] / f.det).abs());
        }
    }
    Ok(ChiJet {
        chi,
        x: f.x,
        y: f.y,
        det: f.det,
        fd_mismatch: mismatch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansivityReport {
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `|Λ(p) - Λ(q)| / |p - q|`.
    pub min_ratio: f64,
}

/// Samples distinct node pairs and checks `|Λ(p) - Λ(q)| > |p - q|`.
pub fn expansivity_probe(rr: &ReparamResult, n_pairs: usize, seed: u64) -> ExpansivityReport {
    let spec = *rr.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let p = rng.gen_range(0..spec.len());
        let q = rng.gen_range(0..spec.len());
        if p != q {
            pairs.push((p, q));
        }
    }
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let (pi, pj) = (p % spec.nx, p / spec.nx);
            let (qi, qj) = (q % spec.nx, q / spec.nx);
            let lp = rr.lambda_node(pi, pj);
            let lq = rr.lambda_node(qi, qj);
            let dl = (lp[0] - lq[0]).hypot(lp[1] - lq[1]);
            let dx = (spec.x(pi) - spec.x(qi)).hypot(spec.y(pj) - spec.y(qj));
            dl / dx
        })
        .collect();
    ExpansivityReport {
        pairs: n_pairs,
        violations: ratios.iter().filter(|&&r| !(r > 1.0)).count(),
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundTripReport {
    pub trials: usize,
    pub failures: usize,
    /// Max of `|Λ(Λ⁻¹(t)) - t|` over successful trials.
    pub max_error: f64,
}

/// Targets `Λ(p)` for random `p` at least two cells inside the domain.
pub fn round_trip_probe(rr: &ReparamResult, n: usize, seed: u64) -> RoundTripReport {
    let spec = *rr.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 2.0 * spec.h;
    let points: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                rng.gen_range(spec.x0 + m..spec.x1 - m),
                rng.gen_range(spec.y0 + m..spec.y1 - m),
            ]
        })
        .collect();
    let errors: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            let t = rr.lambda_at(p[0], p[1]).ok()?;
            let q = lambda_inverse(rr, t).ok()?;
            let l = rr.lambda_at(q[0], q[1]).ok()?;
            Some((l[0] - t[0]).hypot(l[1] - t[1]))
        })
        .collect();
    RoundTripReport {
        trials: n,
        failures: errors.iter().filter(|e| e.is_none()).count(),
        max_error: errors.iter().flatten().copied().fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallReport {
    pub center: [f64; 2],
    pub radius: f64,
    pub targets: usize,
    pub failures: usize,
}

/// For node `p` with `r` half its distance to the boundary, inverts random targets in
/// the disc of radius `r` about `Λ(p)`.
pub fn ball_inclusion_probe(
    rr: &ReparamResult,
    node: (usize, usize),
    n_targets: usize,
    seed: u64,
) -> BallReport {
    let spec = *rr.spec();
    let (i, j) = node;
    let (x, y) = (spec.x(i), spec.y(j));
    let dist = (x - spec.x0)
        .min(spec.x1 - x)
        .min(y - spec.y0)
        .min(spec.y1 - y);
    let r = 0.5 * dist;
    let c = rr.lambda_node(i, j);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<[f64; 2]> = (0..n_targets)
        .map(|_| {
            let rho = r * rng.gen::<f64>().sqrt();
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            [c[0] + rho * ang.cos(), c[1] + rho * ang.sin()]
        })
        .collect();
    let failures = targets
        .par_iter()
        .filter(|t| lambda_inverse(rr, **t).is_err())
        .count();
    BallReport {
        center: [x, y],
        radius: r,
        targets: n_targets,
        failures,
    }
}

/// Writes `t,theta,fit_envelope`.
pub fn write_decay_csv<W: std::io::Write>(fit: &DecayFit, w: W) -> Result<()> {
    let rows: Vec<Vec<f64>> = fit
        .samples
        .iter()
        .map(|s| vec![s.t, s.theta, s.fit_envelope])
        .collect();
    crate::io::write_rows_csv(w, &["t", "theta", "fit_envelope"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::normalize;
    use crate::forms::assemble_forms;
    use crate::potential::{recover_xstar, Anchor};
    use crate::solver::{oracle_solution, Oracle};
    use proptest::prelude::*;

    fn pipeline(
        d: &EnergyDensity,
        u: ScalarField,
        anchor: Anchor,
    ) -> (SurfaceSolution, ReparamResult) {
        let sol = SurfaceSolution::from_field(d, u).unwrap();
        let fa = assemble_forms(&sol).unwrap();
        let ps = recover_xstar(&sol, &fa, anchor, SignConvention::default()).unwrap();
        let rr = ReparamResult::build(&sol, &ps).unwrap();
        (sol, rr)
    }

    fn flat(d: &EnergyDensity) -> ReparamResult {
        let g = GridSpec::square(-2.0, 2.0, 21).unwrap();
        let u = ScalarField::from_fn(g, |_, _| 0.25).unwrap();
        pipeline(d, u, Anchor::nearest(&g, 0.0, 0.0)).1
    }

    #[test]
    fn lambda_of_flat_graph_doubles() {
        for d in [
            EnergyDensity::minimal(),
            EnergyDensity::mu_family(3.0).unwrap(),
        ] {
            let rr = flat(&d);
            let g = *rr.spec();
            for (i, j) in g.nodes() {
                assert!((rr.lambda1.at(i, j) - 2.0 * g.x(i)).abs() < 1e-14);
                assert!((rr.lambda2.at(i, j) - 2.0 * g.y(j)).abs() < 1e-14);
            }
            assert_eq!(rr.lambda_node(10, 10), [0.0, 0.0]);
            let p = rr.inverse([2.0, 2.0]).unwrap();
            assert!((p[0] - 1.0).abs() < 1e-10 && (p[1] - 1.0).abs() < 1e-10);
            let jet = chi_and_jacobian(&rr, [2.0, 2.0]).unwrap();
            assert!((jet.chi[0] - 1.0).abs() < 1e-10);
            assert!((jet.chi[1] - 1.0).abs() < 1e-10);
            assert!((jet.chi[2] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn det_examples() {
        let m = EnergyDensity::minimal();
        assert!((det_closed_form(&m, 0.0) - 4.0).abs() < 1e-15);
        let v = det_closed_form(&m, 1.0);
        assert!((v - (2.0 + 1.5 * 2f64.sqrt())).abs() < 1e-12);
        assert!((v - 4.121320).abs() < 1e-6);
        let lb = det_lower_bound(&m, 1.0);
        assert!((lb - (1.0 + 2f64.sqrt())).abs() < 1e-15 && lb <= v);
    }

    #[test]
    fn det_matches_jacobian_product() {
        for d in [
            EnergyDensity::minimal(),
            EnergyDensity::mu_family(3.0).unwrap(),
            EnergyDensity::mu_family(4.0).unwrap(),
        ] {
            for &(ux, uy) in &[(0.0, 0.0), (0.7, -1.3), (5.0, 2.0)] {
                let j = jacobian_at(&d, ux, uy);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                assert!((det - det_closed_form(&d, ux.hypot(uy))).abs() < 1e-12 * det);
                assert!(inverse_jacobian_error(&d, ux, uy) < 1e-12);
            }
        }
        // The lower bound 1 + Ξ(1+t²) is not universal: it fails for g_4 at a flat point.
        let g4 = EnergyDensity::mu_family(4.0).unwrap();
        assert!(det_closed_form(&g4, 0.0) < det_lower_bound(&g4, 0.0));
    }

    #[test]
    fn frame_spot_value() {
        let d = EnergyDensity::mu_family(3.0).unwrap();
        let f = frame_at(&d, 2.0, 0.0);
        let nx2: f64 = f.x.iter().map(|v| v * v).sum();
        let ny2: f64 = f.y.iter().map(|v| v * v).sum();
        assert!((nx2 - ny2 - 80.0 / 81.0).abs() < 1e-12);
        let f = frame_at(&d, 1.0, 1.0);
        let dot: f64 = (0..3).map(|k| f.x[k] * f.y[k]).sum();
        assert!((dot - d.theta(2f64.sqrt())).abs() < 1e-12);
        let f = frame_at(&d, 0.0, 3.0);
        let dot: f64 = (0..3).map(|k| f.x[k] * f.y[k]).sum();
        assert_eq!(dot, 0.0);
    }

    #[test]
    fn minimal_frame_is_conformal() {
        let m = EnergyDensity::minimal();
        for &(ux, uy) in &[(0.3, 0.4), (-7.0, 2.5), (40.0, -33.0)] {
            let f = frame_at(&m, ux, uy);
            let dot: f64 = (0..3).map(|k| f.x[k] * f.y[k]).sum();
            let nx: f64 = f.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = f.y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(dot.abs() <= 1e-12 * nx * ny);
            assert!((nx * nx - ny * ny).abs() <= 1e-12 * nx * ny);
        }
    }

    #[test]
    fn decay_examples() {
        let z = decay_fit(&EnergyDensity::minimal(), (10.0, 1e4), 200).unwrap();
        assert!(z.identically_zero);
        let f3 = decay_fit(&EnergyDensity::mu_family(3.0).unwrap(), (10.0, 1e4), 200).unwrap();
        assert!((f3.slope + 1.0).abs() <= 0.1, "{}", f3.slope);
        let f25 = decay_fit(&EnergyDensity::mu_family(2.5).unwrap(), (10.0, 1e4), 200).unwrap();
        assert!((f25.slope + 0.5).abs() <= 0.1, "{}", f25.slope);
        for fit in [&f3, &f25] {
            assert!(fit.d1 >= 0.0 && fit.d2 >= 0.0);
            for s in &fit.samples {
                assert!(s.fit_envelope >= s.theta.abs() * (1.0 - 1e-12));
            }
        }
        assert!(decay_fit(&EnergyDensity::minimal(), (0.5, 10.0), 10).is_err());
    }

    #[test]
    fn envelope_lp_matches_vertex_enumeration() {
        let a = [1.0, 0.5, 0.25, 0.1];
        let b = [1.0, 0.9, 0.3, 0.05];
        let y = [1.2, 0.8, 0.3, 0.1];
        let (d1, d2) = smallest_envelope(&a, &b, &y);
        let mut best = f64::INFINITY;
        let feasible = |p: f64, q: f64| (0..4).all(|i| p * a[i] + q * b[i] >= y[i] - 1e-12);
        for i in 0..4 {
            for k in 0..4 {
                let det = a[i] * b[k] - a[k] * b[i];
                let mut cands = vec![(y[i] / a[i], 0.0), (0.0, y[i] / b[i])];
                if det.abs() > 1e-14 {
                    cands.push((
                        (y[i] * b[k] - y[k] * b[i]) / det,
                        (a[i] * y[k] - a[k] * y[i]) / det,
                    ));
                }
                for (p, q) in cands {
                    if p >= 0.0 && q >= 0.0 && feasible(p, q) {
                        best = best.min(p + q);
                    }
                }
            }
        }
        assert!((d1 + d2 - best).abs() < 1e-9, "{} vs {best}", d1 + d2);
        assert!(feasible(d1, d2));
    }

    #[test]
    fn scherk_reparametrization() {
        let m = EnergyDensity::minimal();
        let g = GridSpec::square(-1.2, 1.2, 33).unwrap();
        let u = oracle_solution(Oracle::Scherk, &g).unwrap();
        let (_, mut rr) = pipeline(&m, u, Anchor::lower_left());
        assert_eq!(rr.det_bound_violations, 0);
        assert_eq!(rr.linear_growth_violations, 0);
        assert!(rr.linear_growth_constant >= 0.5);
        assert!(rr.defect_dot.max_abs() <= 1e-12 && rr.defect_diff.max_abs() <= 1e-12);

        let e = expansivity_probe(&rr, 300, 1);
        assert_eq!(e.violations, 0);
        let rt = round_trip_probe(&rr, 100, 2);
        assert_eq!(rt.failures, 0);
        assert!(rt.max_error <= 1e-9);
        let b = ball_inclusion_probe(&rr, (16, 16), 50, 3);
        assert_eq!(b.failures, 0);

        for (i, j) in [(5, 7), (16, 16), (30, 2)] {
            let t = rr.lambda_node(i, j);
            let p = rr.inverse(t).unwrap();
            assert!((p[0] - g.x(i)).abs() < 1e-10 && (p[1] - g.y(j)).abs() < 1e-10);
        }
        let c = rr.lambda_node(16, 16);
        rr.sample_chi(&[c, [c[0] + 0.1, c[1] - 0.2]]).unwrap();
        assert_eq!(rr.chi_samples.len(), 2);
        let jet = chi_and_jacobian(&rr, [c[0] + 0.1, c[1] - 0.2]).unwrap();
        assert!(jet.fd_mismatch < 1e-2, "{}", jet.fd_mismatch);
        assert!(matches!(
            rr.inverse([1e3, 0.0]),
            Err(Error::OutsideImage { .. })
        ));
    }

    #[test]
    fn det_fd_mismatch_converges() {
        let m = EnergyDensity::minimal();
        let coarse = GridSpec::square(-1.2, 1.2, 17).unwrap();
        let mism = |n| {
            let g = GridSpec::square(-1.2, 1.2, n).unwrap();
            let u = oracle_solution(Oracle::Scherk, &g).unwrap();
            let (sol, rr) = pipeline(&m, u, Anchor::lower_left());
            det_dlambda_fd(&rr.lambda1, &rr.lambda2)
                .unwrap()
                .sub(&det_dlambda(&sol))
                .unwrap()
                .max_abs_on_coarse_nodes(&coarse, 1)
                .unwrap()
        };
        let (a, b, c) = (mism(33), mism(65), mism(129));
        assert!((a / b).log2() > 1.8 && (b / c).log2() > 1.8, "{a} {b} {c}");
    }

    #[test]
    fn rejects_exact_form_convention() {
        let m = EnergyDensity::minimal();
        let g = GridSpec::square(-1.0, 1.0, 9).unwrap();
        let sol = SurfaceSolution::from_field(&m, ScalarField::zeros(g)).unwrap();
        let fa = assemble_forms(&sol).unwrap();
        let ps = recover_xstar(&sol, &fa, Anchor::lower_left(), SignConvention::ExactForm).unwrap();
        assert!(ReparamResult::build(&sol, &ps).is_err());
    }

    #[test]
    fn csv_headers() {
        let mut rr = flat(&EnergyDensity::minimal());
        let mut buf = Vec::new();
        rr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,y,lambda1,lambda2,det_dl,det_bound_margin,linear_growth_margin\n"));
        rr.sample_chi(&[[0.5, 0.5]]).unwrap();
        let mut buf = Vec::new();
        rr.write_chi_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("xhat,yhat,chi1,chi2,chi3\n"));
        let fit = decay_fit(&EnergyDensity::mu_family(3.0).unwrap(), (1.0, 100.0), 5).unwrap();
        let mut buf = Vec::new();
        write_decay_csv(&fit, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    proptest! {
        #[test]
        fn theta_identities_hold(ux in -50.0f64..50.0, uy in -50.0f64..50.0, which in 0usize..4) {
            let d = [
                EnergyDensity::minimal(),
                EnergyDensity::mu_family(2.5).unwrap(),
                EnergyDensity::mu_family(3.0).unwrap(),
                normalize(&EnergyDensity::mu_hat_family(3.0).unwrap()).unwrap(),
            ][which].clone();
            let (a, b) = defect_residuals_at(&d, ux, uy);
            prop_assert!(a.abs() <= 1e-12 && b.abs() <= 1e-12, "{} {}", a, b);
        }

        #[test]
        fn pi_inverts_dlambda(ux in -50.0f64..50.0, uy in -50.0f64..50.0) {
            let d = EnergyDensity::mu_family(2.5).unwrap();
            prop_assert!(inverse_jacobian_error(&d, ux, uy) <= 1e-10);
        }
    }
}
