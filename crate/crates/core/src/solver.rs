//! Dirichlet problem for `div{Ξ(|∇u|) ∇u} = 0` by damped Newton on the discrete energy.
//!
//! The discrete energy is the P1 quadrature of `g(|∇u|)`: every grid cell is split
//! along its anti-diagonal into two triangles on which `∇u` is constant. This keeps
//! affine data exactly stationary and gives a compact 7-point Newton stencil, which
//! is factored with a band Cholesky of half-bandwidth `nx - 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandedSpd;
use crate::densities::EnergyDensity;
use crate::error::{Error, Result};
use crate::fields::{GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialGuess {
    /// Discrete harmonic extension of the boundary data.
    Harmonic,
    Zero,
    /// Interior values uniform in `[-amplitude, amplitude]`.
    Random {
        seed: u64,
        amplitude: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Stop once the max-norm of the discrete energy gradient is at most this.
    pub tol_gradient: f64,
    pub max_iters: usize,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    pub initial: InitialGuess,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol_gradient: 1e-10,
            max_iters: 200,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
            initial: InitialGuess::Harmonic,
        }
    }
}

impl SolveConfig {
    fn check(&self) -> Result<()> {
        if !(self.tol_gradient > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol_gradient must be positive, got {}",
                self.tol_gradient
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "line-search shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sufficient-decrease constant must lie in (0, 1), got {}",
                self.sufficient_decrease
            )));
        }
        Ok(())
    }
}

/// Named boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Boundary {
    /// `a x + b y + c`
    Affine { a: f64, b: f64, c: f64 },
    /// `x² - y²`
    Saddle,
    /// `log(cos y / cos x)`
    Scherk,
    /// `slope · √(x² + y²)`
    Radial { slope: f64 },
}

impl Boundary {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Boundary::Affine { a, b, c } => a * x + b * y + c,
            Boundary::Saddle => x * x - y * y,
            Boundary::Scherk => scherk(x, y),
            Boundary::Radial { slope } => slope * x.hypot(y),
        }
    }
}

fn scherk(x: f64, y: f64) -> f64 {
    (y.cos() / x.cos()).ln()
}

/// Exact solutions used as oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Oracle {
    /// Solves the equation for every density.
    Affine { a: f64, b: f64, c: f64 },
    /// Scherk's surface; a solution for the minimal density only.
    Scherk,
}

pub fn oracle_solution(kind: Oracle, spec: &GridSpec) -> Result<ScalarField> {
    match kind {
        Oracle::Affine { a, b, c } => ScalarField::from_fn(*spec, |x, y| a * x + b * y + c),
        Oracle::Scherk => {
            let lim = std::f64::consts::FRAC_PI_2;
            let inside = [spec.x0, spec.x1, spec.y0, spec.y1]
                .iter()
                .all(|v| v.abs() < lim);
            if !inside {
                return Err(Error::OracleDomain(format!(
                    "Scherk's graph needs the rectangle inside |x|, |y| < pi/2; got [{}, {}] x [{}, {}]",
                    spec.x0, spec.x1, spec.y0, spec.y1
                )));
            }
            ScalarField::from_fn(*spec, scherk)
        }
    }
}

/// A graph `u` together with its derivative fields and the density that generated it.
#[derive(Debug, Clone)]
pub struct SurfaceSolution {
    pub density: EnergyDensity,
    pub u: ScalarField,
    pub ux: ScalarField,
    pub uy: ScalarField,
    pub uxx: ScalarField,
    pub uxy: ScalarField,
    pub uyy: ScalarField,
    /// Discrete energy of `u`.
    pub energy: f64,
    /// Max-norm of the strong residual over interior nodes.
    pub residual_norm: f64,
    /// Max-norm of the discrete energy gradient over interior nodes.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Energy after the initial guess and after every accepted step.
    pub energy_history: Vec<f64>,
}

impl SurfaceSolution {
    /// Wraps a given field `u` (for instance oracle samples) without solving.
    pub fn from_field(density: &EnergyDensity, u: ScalarField) -> Result<Self> {
        let (ux, uy) = u.gradient()?;
        let (uxx, uxy, uyy) = u.hessian()?;
        let spec = *u.spec();
        let energy = discrete_energy(density, &u);
        let grad = P1Energy::new(density, spec).gradient(u.values());
        let gradient_norm = spec
            .nodes()
            .filter(|&(i, j)| !spec.is_boundary(i, j))
            .fold(0.0f64, |m, (i, j)| m.max(grad[spec.index(i, j)].abs()));
        let mut sol = Self {
            density: density.clone(),
            u,
            ux,
            uy,
            uxx,
            uxy,
            uyy,
            energy,
            residual_norm: 0.0,
            gradient_norm,
            iterations: 0,
            converged: true,
            energy_history: vec![energy],
        };
        sol.residual_norm = strong_residual(&sol).max_abs_interior(1);
        Ok(sol)
    }

    pub fn spec(&self) -> &GridSpec {
        self.u.spec()
    }

    /// `|∇u|` at storage index `k`.
    #[inline]
    pub fn slope(&self, k: usize) -> f64 {
        self.ux.values()[k].hypot(self.uy.values()[k])
    }
}

/// Pointwise expansion `u_xx[Ξ + k u_x²] + u_yy[Ξ + k u_y²] + 2 k u_x u_y u_xy`, `k = Ξ'(t)/t`,
/// on interior nodes; zero on the boundary.
pub fn strong_residual(sol: &SurfaceSolution) -> ScalarField {
    let spec = *sol.spec();
    let d = &sol.density;
    let v = |f: &ScalarField, k: usize| f.values()[k];
    let vals: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % spec.nx, k / spec.nx);
            if spec.is_boundary(i, j) {
                return 0.0;
            }
            let (ux, uy) = (v(&sol.ux, k), v(&sol.uy, k));
            residual_at(d, ux, uy, v(&sol.uxx, k), v(&sol.uxy, k), v(&sol.uyy, k))
        })
        .collect();
    ScalarField::from_values(spec, vals).expect("residual of finite fields is finite")
}

/// The three-coefficient expansion of the divergence at one jet.
pub fn residual_at(d: &EnergyDensity, ux: f64, uy: f64, uxx: f64, uxy: f64, uyy: f64) -> f64 {
    let t = ux.hypot(uy);
    let xi = d.xi(t);
    let k = d.xi_prime_over_t(t);
    uxx * (xi + k * ux * ux) + uyy * (xi + k * uy * uy) + 2.0 * k * ux * uy * uxy
}

/// P1 discrete energy `Σ_T |T| g(|∇u|_T)`.
pub fn discrete_energy(d: &EnergyDensity, u: &ScalarField) -> f64 {
    P1Energy::new(d, *u.spec()).value(u.values())
}

/// Gradient of [`discrete_energy`] with respect to every nodal value (boundary included).
pub fn discrete_energy_gradient(d: &EnergyDensity, u: &ScalarField) -> ScalarField {
    let spec = *u.spec();
    let g = P1Energy::new(d, spec).gradient(u.values());
    ScalarField::from_values(spec, g).expect("finite gradient")
}

/// One triangle: vertex storage indices and the coefficients with `∇u = Σ c_k u_k`.
#[derive(Clone, Copy)]
struct Triangle {
    nodes: [usize; 3],
    cx: [f64; 3],
    cy: [f64; 3],
}

impl Triangle {
    #[inline]
    fn grad(&self, u: &[f64]) -> (f64, f64) {
        let mut zx = 0.0;
        let mut zy = 0.0;
        for k in 0..3 {
            let v = u[self.nodes[k]];
            zx += self.cx[k] * v;
            zy += self.cy[k] * v;
        }
        (zx, zy)
    }
}

struct P1Energy<'a> {
    density: &'a EnergyDensity,
    spec: GridSpec,
    triangles: Vec<Triangle>,
    area: f64,
}

impl<'a> P1Energy<'a> {
    fn new(density: &'a EnergyDensity, spec: GridSpec) -> Self {
        let GridSpec { nx, ny, h, .. } = spec;
        let r = 1.0 / h;
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let a = spec.index(i, j);
                let b = spec.index(i + 1, j);
                let c = spec.index(i, j + 1);
                let e = spec.index(i + 1, j + 1);
                // Lower: forward differences from (i, j).
                triangles.push(Triangle {
                    nodes: [a, b, c],
                    cx: [-r, r, 0.0],
                    cy: [-r, 0.0, r],
                });
                // Upper: backward differences from (i+1, j+1).
                triangles.push(Triangle {
                    nodes: [e, c, b],
                    cx: [r, -r, 0.0],
                    cy: [r, 0.0, -r],
                });
            }
        }
        Self {
            density,
            spec,
            triangles,
            area: 0.5 * h * h,
        }
    }

    fn value(&self, u: &[f64]) -> f64 {
        let d = self.density;
        let parts: Vec<f64> = self
            .triangles
            .par_iter()
            .map(|t| {
                let (zx, zy) = t.grad(u);
                d.g(zx.hypot(zy))
            })
            .collect();
        self.area * kahan_sum(&parts)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let d = self.density;
        let fluxes: Vec<(f64, f64)> = self
            .triangles
            .par_iter()
            .map(|t| {
                let (zx, zy) = t.grad(u);
                let xi = d.xi(zx.hypot(zy));
                (xi * zx, xi * zy)
            })
            .collect();
        let mut g = vec![0.0; self.spec.len()];
        for (t, (fx, fy)) in self.triangles.iter().zip(fluxes) {
            for k in 0..3 {
                g[t.nodes[k]] += self.area * (fx * t.cx[k] + fy * t.cy[k]);
            }
        }
        g
    }

    /// Hessian restricted to interior unknowns, ordered `(j-1)(nx-2) + (i-1)`.
    fn hessian(&self, u: &[f64]) -> BandedSpd {
        let d = self.density;
        let GridSpec { nx, ny, .. } = self.spec;
        let m = nx - 2;
        let unknown = |k: usize| -> Option<usize> {
            let (i, j) = (k % nx, k / nx);
            if i == 0 || j == 0 || i + 1 == nx || j + 1 == ny {
                None
            } else {
                Some((j - 1) * m + (i - 1))
            }
        };
        // Second derivative of F(Z) = g(|Z|): Ξ I + (g'' - Ξ) ẑ ẑᵀ.
        let blocks: Vec<[f64; 3]> = self
            .triangles
            .par_iter()
            .map(|t| {
                let (zx, zy) = t.grad(u);
                let s = zx.hypot(zy);
                let xi = d.xi(s);
                if s == 0.0 {
                    return [xi, 0.0, xi];
                }
                let (nxz, nyz) = (zx / s, zy / s);
                let c = d.g2(s) - xi;
                [xi + c * nxz * nxz, c * nxz * nyz, xi + c * nyz * nyz]
            })
            .collect();
        let mut a = BandedSpd::zeros(m * (ny - 2), m);
        for (t, hf) in self.triangles.iter().zip(blocks) {
            let ids = t.nodes.map(unknown);
            for p in 0..3 {
                let Some(ip) = ids[p] else { continue };
                for q in 0..3 {
                    let Some(iq) = ids[q] else { continue };
                    if iq > ip {
                        continue;
                    }
                    let v = t.cx[p] * (hf[0] * t.cx[q] + hf[1] * t.cy[q])
                        + t.cy[p] * (hf[1] * t.cx[q] + hf[2] * t.cy[q]);
                    a.add(ip, iq, self.area * v);
                }
            }
        }
        a
    }
}

fn kahan_sum(v: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in v {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

fn interior_indices(spec: &GridSpec) -> Vec<usize> {
    (1..spec.ny - 1)
        .flat_map(|j| (1..spec.nx - 1).map(move |i| spec.index(i, j)))
        .collect()
}

/// Harmonic extension of the boundary values already stored in `u` (5-point Laplacian).
fn harmonic_extension(spec: &GridSpec, u: &mut [f64]) {
    let GridSpec { nx, ny, .. } = *spec;
    let m = nx - 2;
    let n = m * (ny - 2);
    let mut a = BandedSpd::zeros(n, m);
    let mut rhs = vec![0.0; n];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let r = (j - 1) * m + (i - 1);
            a.add(r, r, 4.0);
            for (ii, jj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                if spec.is_boundary(ii, jj) {
                    rhs[r] += u[spec.index(ii, jj)];
                } else {
                    let c = (jj - 1) * m + (ii - 1);
                    if c < r {
                        a.add(r, c, -1.0);
                    }
                }
            }
        }
    }
    let sol = a
        .factor()
        .expect("the Dirichlet Laplacian is positive definite")
        .solve(&rhs);
    for (r, k) in interior_indices(spec).into_iter().enumerate() {
        u[k] = sol[r];
    }
}

fn initial_field(
    spec: &GridSpec,
    boundary: &dyn Fn(f64, f64) -> f64,
    init: InitialGuess,
) -> Result<Vec<f64>> {
    let mut u = vec![0.0; spec.len()];
    for (i, j) in spec.nodes() {
        if spec.is_boundary(i, j) {
            let v = boundary(spec.x(i), spec.y(j));
            if !v.is_finite() {
                return Err(Error::BoundaryNotFinite { i, j });
            }
            u[spec.index(i, j)] = v;
        }
    }
    match init {
        InitialGuess::Zero => {}
        InitialGuess::Harmonic => harmonic_extension(spec, &mut u),
        InitialGuess::Random { seed, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in interior_indices(spec) {
                u[k] = amplitude * rng.gen_range(-1.0..=1.0);
            }
        }
    }
    Ok(u)
}

/// Minimizes the discrete energy with Dirichlet data `boundary`.
///
/// Returns once the interior gradient max-norm is `≤ cfg.tol_gradient`. On failure the
/// best iterate is carried inside [`Error::NotConverged`].
pub fn solve_dirichlet<F>(
    d: &EnergyDensity,
    spec: &GridSpec,
    boundary: F,
    cfg: &SolveConfig,
) -> Result<SurfaceSolution>
where
    F: Fn(f64, f64) -> f64,
{
    cfg.check()?;
    if spec.nx < 3 || spec.ny < 3 {
        return Err(Error::GridTooSmall {
            needed: 3,
            nx: spec.nx,
            ny: spec.ny,
        });
    }
    let mut u = initial_field(spec, &boundary, cfg.initial)?;
    let energy = P1Energy::new(d, *spec);
    let interior = interior_indices(spec);

    let mut f0 = energy.value(&u);
    if !f0.is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }
    let mut history = vec![f0];
    let mut iterations = 0;
    let mut grad_norm;
    let mut converged = false;

    loop {
        let full = energy.gradient(&u);
        let g: Vec<f64> = interior.iter().map(|&k| full[k]).collect();
        grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_norm <= cfg.tol_gradient {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;

        let newton = energy.hessian(&u).factor().map(|c| {
            let mut s = c.solve(&g);
            s.iter_mut().for_each(|v| *v = -*v);
            s
        });
        let steepest: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut directions = Vec::with_capacity(2);
        if let Some(dir) = newton {
            if dot(&dir, &g) < 0.0 {
                directions.push(dir);
            }
        }
        directions.push(steepest);

        let mut accepted = None;
        for dir in &directions {
            if let Some(step) = line_search(&energy, &u, &interior, dir, &g, f0, cfg)? {
                accepted = Some(step);
                break;
            }
        }
        let Some((trial, f1)) = accepted else {
            // Neither direction decreases the energy: stagnation at rounding level.
            break;
        };
        u = trial;
        f0 = f1;
        history.push(f1);
    }

    let field = ScalarField::from_values(*spec, u)?;
    let mut sol = SurfaceSolution::from_field(d, field)?;
    sol.iterations = iterations;
    sol.converged = converged;
    sol.energy_history = history;
    sol.gradient_norm = grad_norm;
    if converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged {
            iterations,
            grad_norm,
            best: Box::new(sol),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backtracking with the Armijo condition. A non-increasing step is also accepted when the
/// predicted decrease is below the rounding level of the energy.
fn line_search(
    energy: &P1Energy<'_>,
    u: &[f64],
    interior: &[usize],
    dir: &[f64],
    g: &[f64],
    f0: f64,
    cfg: &SolveConfig,
) -> Result<Option<(Vec<f64>, f64)>> {
    let slope = dot(dir, g);
    let noise = 64.0 * f64::EPSILON * f0.abs().max(1.0);
    let mut alpha = 1.0;
    let mut trial = u.to_vec();
    for _ in 0..=cfg.max_backtracks {
        for (r, &k) in interior.iter().enumerate() {
            trial[k] = u[k] + alpha * dir[r];
        }
        let f1 = energy.value(&trial);
        if f1.is_finite() {
            let armijo = f1 <= f0 + cfg.sufficient_decrease * alpha * slope;
            let rounding = f1 <= f0 && (alpha * slope).abs() <= noise;
            if armijo || rounding {
                return Ok(Some((trial, f1)));
            }
        }
        alpha *= cfg.shrink;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(n: usize) -> GridSpec {
        GridSpec::square(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn energy_examples() {
        let m = EnergyDensity::minimal();
        let g = unit(9);
        let zero = ScalarField::zeros(g);
        assert!((discrete_energy(&m, &zero) - 1.0).abs() < 1e-14);
        let ux = ScalarField::from_fn(g, |x, _| x).unwrap();
        assert!((discrete_energy(&m, &ux) - 2f64.sqrt()).abs() < 1e-13);
        let g3 = EnergyDensity::mu_family(3.0).unwrap();
        assert!((discrete_energy(&g3, &zero) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn affine_boundary_is_reproduced() {
        let g = GridSpec::square(-1.0, 1.0, 21).unwrap();
        for d in [
            EnergyDensity::minimal(),
            EnergyDensity::mu_family(3.0).unwrap(),
        ] {
            for init in [InitialGuess::Harmonic, InitialGuess::Zero] {
                let cfg = SolveConfig {
                    initial: init,
                    ..Default::default()
                };
                let sol = solve_dirichlet(&d, &g, |x, y| 2.0 * x + y, &cfg).unwrap();
                let exact = oracle_solution(
                    Oracle::Affine {
                        a: 2.0,
                        b: 1.0,
                        c: 0.0,
                    },
                    &g,
                )
                .unwrap();
                assert!(sol.u.sub(&exact).unwrap().max_abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn saddle_converges_monotonically() {
        let d = EnergyDensity::mu_family(3.0).unwrap();
        let g = GridSpec::square(-1.0, 1.0, 33).unwrap();
        let cfg = SolveConfig {
            tol_gradient: 1e-9,
            initial: InitialGuess::Zero,
            ..Default::default()
        };
        let sol = solve_dirichlet(&d, &g, |x, y| Boundary::Saddle.value(x, y), &cfg).unwrap();
        assert!(sol.converged);
        assert!(sol.energy_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.energy_history.len() >= 2);
    }

    #[test]
    fn strong_residual_examples() {
        let m = EnergyDensity::minimal();
        let g = GridSpec::square(-1.0, 1.0, 21).unwrap();
        let q = ScalarField::from_fn(g, |x, y| x * x + y * y).unwrap();
        let sol = SurfaceSolution::from_field(&m, q).unwrap();
        let r = strong_residual(&sol);
        assert!((r.at(10, 10) - 4.0).abs() < 1e-12);
        let a = ScalarField::from_fn(g, |x, y| 0.3 * x - 2.0 * y).unwrap();
        let sol = SurfaceSolution::from_field(&m, a).unwrap();
        assert!(strong_residual(&sol).max_abs() < 1e-12);
    }

    #[test]
    fn scherk_residual_is_second_order() {
        let m = EnergyDensity::minimal();
        let res = |n| {
            let g = GridSpec::square(-1.2, 1.2, n).unwrap();
            let u = oracle_solution(Oracle::Scherk, &g).unwrap();
            SurfaceSolution::from_field(&m, u).unwrap().residual_norm
        };
        let (a, b, c) = (res(33), res(65), res(129));
        assert!((a / b).log2() > 1.6 && (b / c).log2() > 1.6, "{a} {b} {c}");
    }

    #[test]
    fn oracle_examples() {
        let g = unit(3);
        let a = oracle_solution(
            Oracle::Affine {
                a: 1.0,
                b: 1.0,
                c: 0.0,
            },
            &g,
        )
        .unwrap();
        assert_eq!(a.at(1, 1), 1.0);
        let g = GridSpec::square(-1.0, 1.0, 3).unwrap();
        let s = oracle_solution(Oracle::Scherk, &g).unwrap();
        assert_eq!(s.at(1, 1), 0.0);
        assert!((s.at(2, 1) + 1f64.cos().ln()).abs() < 1e-15);
        assert!((s.at(2, 1) - 0.615626).abs() < 1e-6);
        let bad = GridSpec::square(-2.0, 2.0, 5).unwrap();
        assert!(matches!(
            oracle_solution(Oracle::Scherk, &bad),
            Err(Error::OracleDomain(_))
        ));
    }

    #[test]
    fn non_finite_boundary_is_rejected() {
        let g = GridSpec::square(-2.0, 2.0, 9).unwrap();
        let r = solve_dirichlet(
            &EnergyDensity::minimal(),
            &g,
            |x, y| Boundary::Scherk.value(x, y),
            &SolveConfig::default(),
        );
        assert!(matches!(r, Err(Error::BoundaryNotFinite { .. })));
    }

    #[test]
    fn non_convergence_returns_best_iterate() {
        let g = GridSpec::square(-1.0, 1.0, 17).unwrap();
        let cfg = SolveConfig {
            max_iters: 1,
            initial: InitialGuess::Zero,
            ..Default::default()
        };
        match solve_dirichlet(&EnergyDensity::minimal(), &g, |x, y| x * x - y * y, &cfg) {
            Err(Error::NotConverged {
                iterations, best, ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(!best.converged);
                assert_eq!(best.energy_history.len(), 2);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn uniqueness_probe() {
        let d = EnergyDensity::minimal();
        let g = GridSpec::square(-1.0, 1.0, 17).unwrap();
        let bc = |x: f64, y: f64| Boundary::Saddle.value(x, y);
        let tol = 1e-10;
        let run = |initial| {
            let cfg = SolveConfig {
                tol_gradient: tol,
                initial,
                ..Default::default()
            };
            solve_dirichlet(&d, &g, bc, &cfg).unwrap().u
        };
        let a = run(InitialGuess::Zero);
        let b = run(InitialGuess::Random {
            seed: 7,
            amplitude: 1.0,
        });
        assert!(a.sub(&b).unwrap().max_abs() <= 10.0 * tol);
    }

    #[test]
    fn config_is_checked() {
        let g = unit(5);
        let bad = SolveConfig {
            tol_gradient: 0.0,
            ..Default::default()
        };
        assert!(solve_dirichlet(&EnergyDensity::minimal(), &g, |_, _| 0.0, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000, which in 0usize..3) {
            let d = [
                EnergyDensity::minimal(),
                EnergyDensity::mu_family(2.5).unwrap(),
                EnergyDensity::mu_family(3.0).unwrap(),
            ][which].clone();
            let g = GridSpec::square(-1.0, 1.0, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = ScalarField::from_values(g, vals.clone()).unwrap();
            let grad = discrete_energy_gradient(&d, &u);
            let e = P1Energy::new(&d, g);
            let step = 1e-6;
            for k in interior_indices(&g) {
                let mut p = vals.clone();
                p[k] += step;
                let mut m = vals.clone();
                m[k] -= step;
                let fd = (e.value(&p) - e.value(&m)) / (2.0 * step);
                let an = grad.values()[k];
                prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-2), "fd {} analytic {}", fd, an);
            }
        }
    }
}
