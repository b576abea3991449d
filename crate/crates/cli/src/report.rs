//! `report.json`: everything but `wall_times` is a deterministic function of the config.

use std::collections::BTreeMap;

use musurf_core::forms::{ClosednessSummary, IdentityReport};
use musurf_core::potential::PathDiscrepancy;
use musurf_core::reparam::{BallReport, ExpansivityReport, RoundTripReport};
use musurf_core::{DecayFit, DensitySpec, GridSpec, HessReport, ValidationReport};
use serde::Serialize;

use crate::config::Stage;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub spec: DensitySpec,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Full validation of the raw family, present whenever it could be constructed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization_shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_at_infinity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    /// Max-norm of the strong residual over interior nodes.
    pub residual_norm: f64,
    pub energy_monotone: bool,
    /// Max nodal error against the exact solution, when the boundary data have one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FormsReport {
    pub closedness: ClosednessSummary,
    /// Largest relative gap between the two expressions for `φ₁` and `ψ₂`.
    pub identity_error: f64,
    /// Chain-rule expansion of `dγ` against the Euler-equation grouping.
    pub chain_rule_consistency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialReport {
    pub path_discrepancy: PathDiscrepancy,
    pub gradient_mismatch: f64,
    pub hess: HessReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReparamReport {
    pub det_fd_mismatch: f64,
    pub min_det: f64,
    pub image_bounds: [f64; 4],
    pub det_bound_violations: usize,
    pub linear_growth_constant: f64,
    pub linear_growth_violations: usize,
    pub max_defect_dot: f64,
    pub max_defect_diff: f64,
    pub expansivity: ExpansivityReport,
    pub round_trip: RoundTripReport,
    pub ball: BallReport,
    pub chi_samples: usize,
    pub chi_failures: usize,
}

/// One level of an h-halving series.
#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closedness: Option<ClosednessSummary>,
    /// `dα`, `dβ`, `dγ` on the base-grid nodes two spacings inside.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closedness_on_base_nodes: Option<[f64; 3]>,
    /// Path gap of `E` on the base-grid nodes one spacing inside.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_discrepancy_on_base_nodes: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RefinementReport {
    pub levels: Vec<LevelReport>,
    /// `log₂` ratios between consecutive levels, per quantity.
    pub orders: BTreeMap<String, Vec<f64>>,
    /// Why the series stopped early, if it did.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub exit_code: i32,
    pub density: DensityReport,
    pub grid: GridSpec,
    pub stages: Vec<StageStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forms: Option<FormsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reparam: Option<ReparamReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
    /// Seconds per stage; the only non-deterministic part of the report.
    pub wall_times: BTreeMap<String, f64>,
}
