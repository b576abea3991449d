//! Convex linear-growth densities `g` and the scalar functions built from them.
//!
//! Notation used throughout the crate, for `t = |∇u|`:
//!
//! * `Ξ(t) = g'(t)/t`, with `Ξ(0) = g''(0)`
//! * bracket `B(t) = g(t) - t g'(t)`
//! * `ϑ(t) = B(t) - Ξ(t)`
//! * `h(t) = 1 - g'(t)`
//! * `R(t) = g'(t) B(t) / t²`
//! * `Θ(t) = [1 - g g'/t] + [B - g'/t][2 + B]`

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

/// Below this argument `Ξ` is evaluated from `g''` to avoid the 0/0 in `g'(t)/t`.
const XI_TAYLOR_CUTOFF: f64 = 1e-6;
/// Below this argument `Ξ'(t)/t` is replaced by its flat-point limit.
const FLAT_GRADIENT: f64 = 1e-8;
const FLAT_LIMIT_STEP: f64 = 1e-4;
const SIMPSON_TOL: f64 = 1e-12;
/// Base abscissa for the extrapolated limits at infinity.
const LIMIT_T: f64 = 1e8;
const SNAP_TOL: f64 = 1e-10;
const UNIT_SLOPE_TOL: f64 = 1e-8;
const LIMIT_TOL: f64 = 1e-8;
/// The tail integral of `s g''(s)` is declared finite when its decay exponent is below `-1 - margin`.
const TAIL_EXPONENT_MARGIN: f64 = 1e-2;

/// Scalar profile `t ↦ g(t)` with its first two derivatives.
///
/// The remaining methods have generic defaults; families override them with
/// cancellation-free closed forms.
pub trait Profile: Send + Sync + fmt::Debug {
    fn g(&self, t: f64) -> f64;
    fn g1(&self, t: f64) -> f64;
    fn g2(&self, t: f64) -> f64;

    fn xi(&self, t: f64) -> f64 {
        if t < XI_TAYLOR_CUTOFF {
            let c = self.g2(0.0);
            c + 0.5 * (self.g2(t) - c)
        } else {
            self.g1(t) / t
        }
    }

    fn bracket(&self, t: f64) -> f64 {
        self.g(t) - t * self.g1(t)
    }

    fn deficit(&self, t: f64) -> f64 {
        1.0 - self.g1(t)
    }
}

/// `g_min(t) = √(1+t²)`.
#[derive(Debug, Clone, Copy)]
pub struct Minimal;

impl Profile for Minimal {
    fn g(&self, t: f64) -> f64 {
        t.hypot(1.0)
    }
    fn g1(&self, t: f64) -> f64 {
        t / t.hypot(1.0)
    }
    fn g2(&self, t: f64) -> f64 {
        t.hypot(1.0).powi(-3)
    }
    fn xi(&self, t: f64) -> f64 {
        1.0 / t.hypot(1.0)
    }
    fn bracket(&self, t: f64) -> f64 {
        1.0 / t.hypot(1.0)
    }
    fn deficit(&self, t: f64) -> f64 {
        let w = t.hypot(1.0);
        1.0 / (w * (w + t))
    }
}

/// `g_μ(t) = t + (1+t)^{2-μ}/(μ-2)`, convex for `μ > 1`.
#[derive(Debug, Clone, Copy)]
pub struct MuFamily {
    pub mu: f64,
}

impl MuFamily {
    /// `(1+t)^{1-μ}`
    fn tail(&self, t: f64) -> f64 {
        ((1.0 - self.mu) * t.ln_1p()).exp()
    }
}

impl Profile for MuFamily {
    fn g(&self, t: f64) -> f64 {
        t + (1.0 + t) * self.tail(t) / (self.mu - 2.0)
    }
    fn g1(&self, t: f64) -> f64 {
        -((1.0 - self.mu) * t.ln_1p()).exp_m1()
    }
    fn g2(&self, t: f64) -> f64 {
        (self.mu - 1.0) * self.tail(t) / (1.0 + t)
    }
    fn xi(&self, t: f64) -> f64 {
        if t < XI_TAYLOR_CUTOFF {
            let c = self.mu - 1.0;
            c + 0.5 * (self.g2(t) - c)
        } else {
            self.g1(t) / t
        }
    }
    fn bracket(&self, t: f64) -> f64 {
        // g - t g' = (1+t)^{1-μ} [(μ-1) t + 1] / (μ-2)
        self.tail(t) * ((self.mu - 1.0) * t + 1.0) / (self.mu - 2.0)
    }
    fn deficit(&self, t: f64) -> f64 {
        self.tail(t)
    }
}

/// `ĝ_μ(t) = ∫₀ᵗ ∫₀ˢ (1+τ²)^{-μ/2} dτ ds`.
///
/// `g'` is `∫₀^{atan t} cos^{μ-2}θ dθ` (closed form `t/√(1+t²)` at `μ = 3`, adaptive
/// Simpson otherwise). The outer integral is reduced by parts to
/// `g = t g' + ((1+t²)^{1-μ/2} - 1)/(μ-2)`, so no nested quadrature is needed.
#[derive(Debug, Clone, Copy)]
pub struct MuHatFamily {
    pub mu: f64,
    slope_at_infinity: f64,
}

impl MuHatFamily {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            slope_at_infinity: mu_hat_slope_at_infinity(mu),
        }
    }

    fn is_three(&self) -> bool {
        self.mu == 3.0
    }

    fn cos_power(&self, theta: f64) -> f64 {
        theta.cos().powf(self.mu - 2.0)
    }
}

/// `∫₀^∞ (1+τ²)^{-μ/2} dτ = (√π/2) Γ((μ-1)/2) / Γ(μ/2)`.
pub fn mu_hat_slope_at_infinity(mu: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if mu <= 1.0 {
        return f64::INFINITY;
    }
    0.5 * std::f64::consts::PI.sqrt() * (ln_gamma(0.5 * (mu - 1.0)) - ln_gamma(0.5 * mu)).exp()
}

impl Profile for MuHatFamily {
    fn g(&self, t: f64) -> f64 {
        t * self.g1(t) + self.bracket(t)
    }
    fn g1(&self, t: f64) -> f64 {
        if self.is_three() {
            return t / t.hypot(1.0);
        }
        let f = |theta: f64| self.cos_power(theta);
        let theta = t.atan();
        // Integrate the short side to keep the tolerance meaningful near the limit.
        if theta > std::f64::consts::FRAC_PI_4 {
            self.slope_at_infinity
                - adaptive_simpson(&f, theta, std::f64::consts::FRAC_PI_2, SIMPSON_TOL)
        } else {
            adaptive_simpson(&f, 0.0, theta, SIMPSON_TOL)
        }
    }
    fn g2(&self, t: f64) -> f64 {
        (-0.5 * self.mu * (t * t).ln_1p()).exp()
    }
    fn xi(&self, t: f64) -> f64 {
        if self.is_three() {
            1.0 / t.hypot(1.0)
        } else if t < XI_TAYLOR_CUTOFF {
            1.0 + 0.5 * (self.g2(t) - 1.0)
        } else {
            self.g1(t) / t
        }
    }
    fn bracket(&self, t: f64) -> f64 {
        let e = 1.0 - 0.5 * self.mu;
        let l = (t * t).ln_1p();
        if e == 0.0 {
            -0.5 * l
        } else {
            (e * l).exp_m1() / (self.mu - 2.0)
        }
    }
    fn deficit(&self, t: f64) -> f64 {
        if self.is_three() {
            let w = t.hypot(1.0);
            return 1.0 / (w * (w + t));
        }
        let theta = t.atan();
        let f = |th: f64| self.cos_power(th);
        if theta > std::f64::consts::FRAC_PI_4 {
            (1.0 - self.slope_at_infinity)
                + adaptive_simpson(&f, theta, std::f64::consts::FRAC_PI_2, SIMPSON_TOL)
        } else {
            1.0 - self.g1(t)
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied profile from three closures.
#[derive(Clone)]
pub struct CustomProfile {
    name: String,
    g: ScalarFn,
    g1: ScalarFn,
    g2: ScalarFn,
}

impl fmt::Debug for CustomProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomProfile")
            .field("name", &self.name)
            .finish()
    }
}

impl Profile for CustomProfile {
    fn g(&self, t: f64) -> f64 {
        (self.g)(t)
    }
    fn g1(&self, t: f64) -> f64 {
        (self.g1)(t)
    }
    fn g2(&self, t: f64) -> f64 {
        (self.g2)(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Minimal,
    Mu,
    MuHat,
    Custom,
}

impl fmt::Display for DensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensityKind::Minimal => "minimal",
            DensityKind::Mu => "mu",
            DensityKind::MuHat => "mu_hat",
            DensityKind::Custom => "custom",
        })
    }
}

/// Constants of the linear growth bound `a t - b ≤ g(t) ≤ A t + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBounds {
    pub a: f64,
    pub upper_slope: f64,
    pub b: f64,
    pub upper_offset: f64,
}

impl GrowthBounds {
    pub fn new(a: f64, upper_slope: f64, b: f64, upper_offset: f64) -> Self {
        Self {
            a,
            upper_slope,
            b,
            upper_offset,
        }
    }

    fn shifted(self, k: f64) -> Self {
        // g - k: a t - (b + k) ≤ g - k ≤ A t + (B - k). A negative offset can be dropped.
        Self {
            b: (self.b + k).max(0.0),
            upper_offset: (self.upper_offset - k).max(0.0),
            ..self
        }
    }

    fn scaled(self, s: f64) -> Self {
        Self {
            a: self.a * s,
            upper_slope: self.upper_slope * s,
            b: self.b * s,
            upper_offset: self.upper_offset * s,
        }
    }
}

/// An energy density `t ↦ scale · g(t) - shift` together with its recorded constants.
#[derive(Debug, Clone)]
pub struct EnergyDensity {
    kind: DensityKind,
    profile: Arc<dyn Profile>,
    scale: f64,
    normalization_shift: f64,
    mu_exponent: Option<f64>,
    growth_bounds: GrowthBounds,
    slope_at_infinity: f64,
    ellipticity_constants: Option<(f64, f64)>,
    normalized: bool,
}

impl EnergyDensity {
    pub fn minimal() -> Self {
        Self {
            kind: DensityKind::Minimal,
            profile: Arc::new(Minimal),
            scale: 1.0,
            normalization_shift: 0.0,
            mu_exponent: Some(3.0),
            growth_bounds: GrowthBounds::new(1.0, 1.0, 0.0, 1.0),
            slope_at_infinity: 1.0,
            ellipticity_constants: Some((1.0, 0.5)),
            normalized: false,
        }
    }

    /// `g_μ` for any `μ > 1`, `μ ≠ 2`. No integrability check; see [`make_builtin`].
    pub fn mu_family(mu: f64) -> Result<Self> {
        if !(mu > 1.0) || mu == 2.0 || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "g_mu needs mu > 1 and mu != 2, got {mu}"
            )));
        }
        let profile = MuFamily { mu };
        let (growth_bounds, ellipticity) = if mu > 2.0 {
            (
                GrowthBounds::new(1.0, 1.0, 0.0, 1.0 / (mu - 2.0)),
                Some((mu / (mu - 2.0), 1.0)),
            )
        } else {
            // g = t - (1+t)^{2-μ}/(2-μ) ≤ t; below, g ≥ t/2 - b with the sup attained at
            // (1+t*)^{1-μ} = 1/2.
            let ts = 2f64.powf(1.0 / (mu - 1.0)) - 1.0;
            let b = (0.5 * ts - profile.g(ts)).max(0.0);
            (GrowthBounds::new(0.5, 1.0, b, 0.0), None)
        };
        Ok(Self {
            kind: DensityKind::Mu,
            profile: Arc::new(profile),
            scale: 1.0,
            normalization_shift: 0.0,
            mu_exponent: Some(mu),
            growth_bounds,
            slope_at_infinity: 1.0,
            ellipticity_constants: ellipticity,
            normalized: false,
        })
    }

    /// `ĝ_μ` for any `μ > 1`. No integrability or slope check; see [`make_builtin`].
    pub fn mu_hat_family(mu: f64) -> Result<Self> {
        if !(mu > 1.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu_hat needs mu > 1, got {mu}"
            )));
        }
        let profile = MuHatFamily::new(mu);
        let s = profile.slope_at_infinity;
        let (growth_bounds, ellipticity) = if mu > 2.0 {
            // B(t) ∈ (-1/(μ-2), 0] and t g' ≤ s t, so s t - 1/(μ-2) ≤ g ≤ s t.
            (
                GrowthBounds::new(s, s, 1.0 / (mu - 2.0), 0.0),
                Some((1.0 / (mu - 2.0), 1.0 / (mu - 1.0))),
            )
        } else {
            let a = 0.5 * s;
            let b = (0..=400)
                .map(|k| 10f64.powf(-3.0 + 10.0 * k as f64 / 400.0))
                .map(|t| a * t - profile.g(t))
                .fold(0.0, f64::max);
            (GrowthBounds::new(a, s, b * (1.0 + 1e-6), 0.0), None)
        };
        Ok(Self {
            kind: DensityKind::MuHat,
            profile: Arc::new(profile),
            scale: 1.0,
            normalization_shift: 0.0,
            mu_exponent: Some(mu),
            growth_bounds,
            slope_at_infinity: s,
            ellipticity_constants: ellipticity,
            normalized: false,
        })
    }

    /// Density from closures for `g`, `g'`, `g''`.
    pub fn custom<G, G1, G2>(
        name: impl Into<String>,
        g: G,
        g1: G1,
        g2: G2,
        growth_bounds: GrowthBounds,
        slope_at_infinity: f64,
    ) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        G1: Fn(f64) -> f64 + Send + Sync + 'static,
        G2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: DensityKind::Custom,
            profile: Arc::new(CustomProfile {
                name: name.into(),
                g: Arc::new(g),
                g1: Arc::new(g1),
                g2: Arc::new(g2),
            }),
            scale: 1.0,
            normalization_shift: 0.0,
            mu_exponent: None,
            growth_bounds,
            slope_at_infinity,
            ellipticity_constants: None,
            normalized: false,
        }
    }

    /// Multiplies `g` by `factor > 0`, e.g. to bring `g'_∞` to 1 before [`normalize`].
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            scale: self.scale * factor,
            normalization_shift: self.normalization_shift * factor,
            growth_bounds: self.growth_bounds.scaled(factor),
            slope_at_infinity: self.slope_at_infinity * factor,
            ellipticity_constants: self
                .ellipticity_constants
                .map(|(c1, c2)| (c1 * factor, c2 * factor)),
            normalized: false,
            ..self.clone()
        })
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }
    pub fn mu_exponent(&self) -> Option<f64> {
        self.mu_exponent
    }
    pub fn growth_bounds(&self) -> GrowthBounds {
        self.growth_bounds
    }
    /// `K`, the constant subtracted from `g` by [`normalize`].
    pub fn normalization_shift(&self) -> f64 {
        self.normalization_shift
    }
    pub fn slope_at_infinity(&self) -> f64 {
        self.slope_at_infinity
    }
    /// `(c₁, c₂)` with `|g - t g'| ≤ c₁ t^{2-μ}` and `0 ≤ 1 - g' ≤ c₂ t^{1-μ}` for `t ≥ 1`.
    pub fn ellipticity_constants(&self) -> Option<(f64, f64)> {
        self.ellipticity_constants
    }
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn g(&self, t: f64) -> f64 {
        self.scale * self.profile.g(t) - self.normalization_shift
    }
    pub fn g1(&self, t: f64) -> f64 {
        self.scale * self.profile.g1(t)
    }
    pub fn g2(&self, t: f64) -> f64 {
        self.scale * self.profile.g2(t)
    }

    /// `Ξ(t) = g'(t)/t`, continuous at 0 with value `g''(0)`.
    pub fn xi(&self, t: f64) -> f64 {
        self.scale * self.profile.xi(t)
    }

    /// `g(t) - t g'(t)`.
    pub fn bracket(&self, t: f64) -> f64 {
        self.scale * self.profile.bracket(t) - self.normalization_shift
    }

    pub fn vartheta(&self, t: f64) -> f64 {
        self.bracket(t) - self.xi(t)
    }

    /// `h(t) = 1 - g'(t)`.
    pub fn deficit(&self, t: f64) -> f64 {
        if self.scale == 1.0 {
            self.profile.deficit(t)
        } else {
            1.0 - self.g1(t)
        }
    }

    /// `R(t) = g'(t) (g - t g') / t²`, i.e. `Ξ · (g - t g') / t`; zero at `t = 0` by convention.
    pub fn remainder(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        self.xi(t) * self.bracket(t) / t
    }

    /// `Ξ'(t) = (g'' - Ξ)/t`, with limit 0 at `t = 0`.
    pub fn xi_prime(&self, t: f64) -> f64 {
        if t < FLAT_GRADIENT {
            return 0.0;
        }
        (self.g2(t) - self.xi(t)) / t
    }

    /// `Ξ'(t)/t`, replaced at flat points by the symmetric limit `2(Ξ(δ) - Ξ(0))/δ²`.
    pub fn xi_prime_over_t(&self, t: f64) -> f64 {
        if t < FLAT_GRADIENT {
            let d = FLAT_LIMIT_STEP;
            return 2.0 * (self.xi(d) - self.xi(0.0)) / (d * d);
        }
        self.xi_prime(t) / t
    }

    /// Conformality-defect factor.
    pub fn theta(&self, t: f64) -> f64 {
        let h = self.deficit(t);
        let b = self.bracket(t);
        let xi = self.xi(t);
        h * (2.0 - h) - b * xi + (b - xi) * (2.0 + b)
    }

    /// The same factor from its other closed form, `-Ξ(2 + 2g - t g') + (1 + B)²`.
    pub fn theta_tilde(&self, t: f64) -> f64 {
        let xi = self.xi(t);
        let b = self.bracket(t);
        -xi * (2.0 + 2.0 * self.g(t) - t * self.g1(t)) + (1.0 + b) * (1.0 + b)
    }

    pub fn diagnostics(&self, t: f64) -> DensityDiagnostics {
        DensityDiagnostics {
            t,
            xi: self.xi(t),
            vartheta: self.vartheta(t),
            h: self.deficit(t),
            remainder: self.remainder(t),
            bracket: self.bracket(t),
            theta: self.theta(t),
        }
    }

    fn with_shift(&self, k: f64) -> Self {
        Self {
            normalization_shift: self.normalization_shift + k,
            growth_bounds: self.growth_bounds.shifted(k),
            ..self.clone()
        }
    }
}

/// Per-`t` derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityDiagnostics {
    pub t: f64,
    pub xi: f64,
    pub vartheta: f64,
    pub h: f64,
    pub remainder: f64,
    pub bracket: f64,
    pub theta: f64,
}

/// Density block of a run configuration: `{"kind": "mu", "mu": 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub kind: DensityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl DensitySpec {
    /// Builds, validates and normalizes the density.
    pub fn build(&self) -> Result<EnergyDensity> {
        normalize(&make_builtin(self.kind, self.mu)?)
    }
}

/// A built-in family, validated on [`default_sample_grid`].
pub fn make_builtin(kind: DensityKind, mu: Option<f64>) -> Result<EnergyDensity> {
    let need_mu = || {
        mu.ok_or_else(|| Error::InvalidParameter(format!("density kind {kind} needs a mu value")))
    };
    let d = match kind {
        DensityKind::Minimal => EnergyDensity::minimal(),
        DensityKind::Mu | DensityKind::MuHat => {
            let mu = need_mu()?;
            if !(mu > 2.0) {
                return Err(Error::Integrability { mu });
            }
            if kind == DensityKind::Mu {
                EnergyDensity::mu_family(mu)?
            } else {
                EnergyDensity::mu_hat_family(mu)?
            }
        }
        DensityKind::Custom => {
            return Err(Error::InvalidParameter(
                "custom densities are built with EnergyDensity::custom".into(),
            ))
        }
    };
    let report = validate(&d, &default_sample_grid());
    if !report.passed() {
        return Err(Error::DensityValidation(report));
    }
    Ok(d)
}

/// `{0} ∪` 400 log-spaced points on `[10⁻³, 10⁴]`.
pub fn default_sample_grid() -> Vec<f64> {
    let n = 400;
    std::iter::once(0.0)
        .chain((0..n).map(|k| 10f64.powf(-3.0 + 7.0 * k as f64 / (n - 1) as f64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    SampleGrid,
    SlopeAtOrigin,
    StrictConvexity,
    GrowthBounds,
    Integrability,
    BracketMonotone,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub kind: CheckKind,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate`]. Never aborts early: every check that can run is reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    /// Estimate of `∫₀^∞ s g''(s) ds`; infinite when the tail test fails.
    pub integral_estimate: f64,
    /// Fitted exponent `p` in `s g''(s) ~ s^p` over the last sampled decade.
    pub tail_exponent: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, kind: CheckKind) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.kind == kind)
    }

    pub fn summary(&self) -> String {
        let failed: Vec<String> = self
            .failures()
            .map(|c| format!("{:?}: {}", c.kind, c.detail))
            .collect();
        if failed.is_empty() {
            "all checks passed".into()
        } else {
            failed.join("; ")
        }
    }
}

fn rel_tol(v: f64) -> f64 {
    1e-10 * (1.0 + v.abs())
}

/// Checks the structural assumptions on `d` over `samples`.
pub fn validate(d: &EnergyDensity, samples: &[f64]) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |kind, passed, detail: String| {
        checks.push(ValidationCheck {
            kind,
            passed,
            detail,
        })
    };

    let sorted = samples.windows(2).all(|w| w[0] < w[1]);
    let first = samples.first().copied().unwrap_or(f64::NAN);
    let last = samples.last().copied().unwrap_or(f64::NAN);
    let grid_ok = !samples.is_empty() && sorted && first == 0.0 && last >= 1e3;
    push(
        CheckKind::SampleGrid,
        grid_ok,
        format!(
            "{} samples on [{first}, {last}], sorted: {sorted}; need [0, T] with T >= 1e3",
            samples.len()
        ),
    );
    if samples.is_empty() {
        return ValidationReport {
            checks,
            integral_estimate: f64::NAN,
            tail_exponent: f64::NAN,
        };
    }

    let g1_0 = d.g1(0.0);
    push(
        CheckKind::SlopeAtOrigin,
        g1_0.abs() <= 1e-12,
        format!("g'(0) = {g1_0:e}"),
    );

    let bad_convex: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && !(d.g2(t) > 0.0))
        .collect();
    push(
        CheckKind::StrictConvexity,
        bad_convex.is_empty(),
        match bad_convex.first() {
            None => "g'' > 0 on all positive samples".into(),
            Some(t) => format!("g''({t}) = {:e} is not positive", d.g2(*t)),
        },
    );

    let gb = d.growth_bounds();
    let growth_bad = samples.iter().copied().find(|&t| {
        let g = d.g(t);
        !(gb.a * t - gb.b <= g + rel_tol(g))
            || !(g <= gb.upper_slope * t + gb.upper_offset + rel_tol(g))
    });
    push(
        CheckKind::GrowthBounds,
        growth_bad.is_none() && gb.a > 0.0 && gb.upper_slope > 0.0,
        match growth_bad {
            None => format!(
                "{} t - {} <= g(t) <= {} t + {}",
                gb.a, gb.b, gb.upper_slope, gb.upper_offset
            ),
            Some(t) => format!("bound violated at t = {t}: g = {}", d.g(t)),
        },
    );

    let (estimate, exponent, detail) = integrability(d, samples);
    push(CheckKind::Integrability, estimate.is_finite(), detail);

    let mono_bad = samples.windows(2).find(|w| {
        let (b0, b1) = (d.bracket(w[0]), d.bracket(w[1]));
        b1 > b0 + 1e-12 * (1.0 + b0.abs())
    });
    push(
        CheckKind::BracketMonotone,
        mono_bad.is_none(),
        match mono_bad {
            None => "g - t g' nonincreasing on samples".into(),
            Some(w) => format!("g - t g' increases between t = {} and t = {}", w[0], w[1]),
        },
    );

    ValidationReport {
        checks,
        integral_estimate: estimate,
        tail_exponent: exponent,
    }
}

/// Partial trapezoid integral of `s g''(s)` plus a power-law tail from the last decade.
fn integrability(d: &EnergyDensity, samples: &[f64]) -> (f64, f64, String) {
    let f = |s: f64| s * d.g2(s);
    let partial: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (f(w[0]) + f(w[1])))
        .sum();
    let big_t = *samples.last().unwrap();
    let decade: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&s| s >= big_t / 10.0 && s > 0.0 && f(s) > 0.0)
        .map(|s| (s.ln(), f(s).ln()))
        .collect();
    if decade.len() < 3 {
        return (
            f64::INFINITY,
            f64::NAN,
            "fewer than 3 positive samples in the last decade; tail undecidable".into(),
        );
    }
    let p = least_squares_slope(&decade);
    if p < -1.0 - TAIL_EXPONENT_MARGIN {
        let tail = big_t * f(big_t) / (-p - 1.0);
        let est = partial + tail;
        (
            est,
            p,
            format!("int s g'' ~ {est:.6} (tail exponent {p:.4})"),
        )
    } else {
        (
            f64::INFINITY,
            p,
            format!(
                "int_0^inf s g''(s) ds diverges: s g''(s) decays like s^{p:.4}, need exponent < -1 (mu > 2)"
            ),
        )
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Limit at infinity of `f` from `f(T), f(2T), f(4T)` by Aitken's Δ² process.
fn extrapolate_limit(f: impl Fn(f64) -> f64) -> f64 {
    let (f0, f1, f2) = (f(LIMIT_T), f(2.0 * LIMIT_T), f(4.0 * LIMIT_T));
    let d1 = f0 - f1;
    let d2 = f1 - f2;
    if d1 == 0.0 {
        return f2;
    }
    let r = d2 / d1;
    if !(r > 0.0 && r < 1.0) {
        return f2;
    }
    f2 - d2 * r / (1.0 - r)
}

/// Subtracts `K = lim (g - t g')` so that the bracket tends to 0.
///
/// The density must pass [`validate`] and already have `g'_∞ = 1`; it is never rescaled.
pub fn normalize(d: &EnergyDensity) -> Result<EnergyDensity> {
    let report = validate(d, &default_sample_grid());
    if !report.passed() {
        return Err(Error::DensityValidation(report));
    }
    let mut k = extrapolate_limit(|t| d.bracket(t));
    if k.abs() < SNAP_TOL {
        k = 0.0;
    }
    let mut out = d.with_shift(k);

    let slope = extrapolate_limit(|t| out.g1(t));
    if (slope - 1.0).abs() > UNIT_SLOPE_TOL {
        return Err(Error::NonUnitSlope { slope });
    }
    let limit = extrapolate_limit(|t| out.bracket(t));
    if limit.abs() > LIMIT_TOL {
        return Err(Error::NormalizationFailed { limit });
    }
    out.slope_at_infinity = 1.0;
    out.normalized = true;
    Ok(out)
}

/// Writes `t,g,g1,g2,xi,vartheta,h,R,theta` rows.
pub fn write_diagnostics_csv<W: Write>(d: &EnergyDensity, ts: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "t,g,g1,g2,xi,vartheta,h,R,theta")?;
    for &t in ts {
        let q = d.diagnostics(t);
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            t,
            d.g(t),
            d.g1(t),
            d.g2(t),
            q.xi,
            q.vartheta,
            q.h,
            q.remainder,
            q.theta
        )?;
    }
    Ok(())
}
