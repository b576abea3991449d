//! Stage execution: density, then solve → forms → potential → reparam, identities, decay,
//! and an optional refinement series.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use musurf_core::convergence::observed_orders;
use musurf_core::densities::default_sample_grid;
use musurf_core::forms::{chain_rule_consistency, density_identities};
use musurf_core::potential::{check_hess_e, write_potential_csv};
use musurf_core::reparam::{
    ball_inclusion_probe, decay_fit, expansivity_probe, round_trip_probe, write_decay_csv,
};
use musurf_core::solver::oracle_solution;
use musurf_core::{
    assemble_forms, closedness_residuals, recover_xstar, solve_dirichlet, validate, Boundary,
    DensityKind, DensitySpec, EnergyDensity, Error, FormAssembly, GridSpec, Oracle, PotentialSet,
    ReparamResult, SignConvention, SurfaceSolution,
};

use crate::config::{RunConfig, Stage};
use crate::report::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO_OR_CONFIG: i32 = 1;
pub const EXIT_DENSITY: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

const IDENTITY_SAMPLES: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];

/// A stage failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
    /// Best iterate of a solve that did not converge.
    partial: Option<Box<SurfaceSolution>>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, partial) = match e {
            Error::NotConverged { best, .. } => (EXIT_NOT_CONVERGED, Some(best)),
            Error::Integrability { .. }
            | Error::DensityValidation(_)
            | Error::NonUnitSlope { .. }
            | Error::NormalizationFailed { .. } => (EXIT_DENSITY, None),
            _ => (EXIT_IO_OR_CONFIG, None),
        };
        Failure {
            code,
            message,
            partial,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure {
            code: EXIT_IO_OR_CONFIG,
            message: format!("{e:#}"),
            partial: None,
        }
    }
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> musurf_core::Result<()>,
) -> anyhow::Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn build_density(spec: &DensitySpec) -> (Result<EnergyDensity, Failure>, DensityReport) {
    // Validate the raw family whenever it can be built so a rejection comes with every check.
    let raw = match (spec.kind, spec.mu) {
        (DensityKind::Minimal, _) => Some(EnergyDensity::minimal()),
        (DensityKind::Mu, Some(mu)) => EnergyDensity::mu_family(mu).ok(),
        (DensityKind::MuHat, Some(mu)) => EnergyDensity::mu_hat_family(mu).ok(),
        _ => None,
    };
    let validation = raw.as_ref().map(|d| validate(d, &default_sample_grid()));
    let built = spec.build();
    let report = DensityReport {
        spec: *spec,
        status: if built.is_ok() {
            Status::Ok
        } else {
            Status::Failed
        },
        message: built.as_ref().err().map(|e| e.to_string()),
        validation,
        normalization_shift: built.as_ref().ok().map(|d| d.normalization_shift()),
        slope_at_infinity: built.as_ref().ok().map(|d| d.slope_at_infinity()),
    };
    (built.map_err(Failure::from), report)
}

/// Exact solution for the boundary data, if one is known.
fn oracle_for(boundary: Option<Boundary>, d: &EnergyDensity) -> Option<Oracle> {
    match boundary? {
        Boundary::Affine { a, b, c } => Some(Oracle::Affine { a, b, c }),
        Boundary::Scherk if d.kind() == DensityKind::Minimal => Some(Oracle::Scherk),
        _ => None,
    }
}

fn oracle_error(oracle: Option<Oracle>, sol: &SurfaceSolution) -> Option<f64> {
    let exact = oracle_solution(oracle?, sol.spec()).ok()?;
    Some(sol.u.sub(&exact).ok()?.max_abs())
}

fn solve_report(sol: &SurfaceSolution, oracle: Option<Oracle>) -> SolveReport {
    SolveReport {
        converged: sol.converged,
        iterations: sol.iterations,
        energy: sol.energy,
        gradient_norm: sol.gradient_norm,
        residual_norm: sol.residual_norm,
        energy_monotone: sol.energy_history.windows(2).all(|w| w[1] <= w[0]),
        oracle_error: oracle_error(oracle, sol),
    }
}

fn solve_on(
    cfg: &RunConfig,
    d: &EnergyDensity,
    spec: &GridSpec,
) -> Result<SurfaceSolution, Failure> {
    let b = cfg.boundary.expect("checked by ordered_stages");
    Ok(solve_dirichlet(d, spec, |x, y| b.value(x, y), &cfg.solve)?)
}

#[derive(Default)]
struct State {
    sol: Option<SurfaceSolution>,
    fa: Option<FormAssembly>,
    ps: Option<PotentialSet>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    density: EnergyDensity,
    base: GridSpec,
    report: RunReport,
    state: State,
}

impl Runner<'_> {
    fn run_stage(&mut self, stage: Stage) -> Result<(), Failure> {
        match stage {
            Stage::Solve => self.solve(),
            Stage::Forms => self.forms(),
            Stage::Potential => self.potential(),
            Stage::Reparam => self.reparam(),
            Stage::Identities => {
                self.report.identities = Some(density_identities(&self.density, &IDENTITY_SAMPLES));
                Ok(())
            }
            Stage::Decay => self.decay(),
        }
    }

    fn solve(&mut self) -> Result<(), Failure> {
        let oracle = oracle_for(self.cfg.boundary, &self.density);
        let (sol, failure) = match solve_on(self.cfg, &self.density, &self.base) {
            Ok(sol) => (sol, None),
            Err(mut f) => match f.partial.take() {
                Some(best) => (*best, Some(f)),
                None => return Err(f),
            },
        };
        self.report.solve = Some(solve_report(&sol, oracle));
        write_file(self.out, "solution.csv", |w| {
            musurf_core::io::write_fields_csv(w, &[("u", &sol.u)])
        })?;
        if let Some(f) = failure {
            return Err(f);
        }
        self.state.sol = Some(sol);
        Ok(())
    }

    fn forms(&mut self) -> Result<(), Failure> {
        let sol = self.state.sol.as_ref().expect("solve ran");
        let fa = assemble_forms(sol)?;
        let cr = closedness_residuals(&fa)?;
        write_file(self.out, "closedness.csv", |w| {
            musurf_core::io::write_fields_csv(
                w,
                &[
                    ("d_alpha", &cr.d_alpha),
                    ("d_beta", &cr.d_beta),
                    ("d_gamma", &cr.d_gamma),
                ],
            )
        })?;
        self.report.forms = Some(FormsReport {
            closedness: cr.summary(),
            identity_error: fa.identity_error,
            chain_rule_consistency: chain_rule_consistency(sol),
        });
        self.state.fa = Some(fa);
        Ok(())
    }

    fn potential(&mut self) -> Result<(), Failure> {
        let sol = self.state.sol.as_ref().expect("solve ran");
        let fa = self.state.fa.as_ref().expect("forms ran");
        let anchor = self.cfg.anchor.unwrap_or_default();
        let ps = recover_xstar(sol, fa, anchor, SignConvention::Reparametrization)?;
        write_file(self.out, "potential.csv", |w| write_potential_csv(&ps, w))?;
        self.report.potential = Some(PotentialReport {
            path_discrepancy: ps.path_discrepancy,
            gradient_mismatch: ps.gradient_mismatch()?,
            hess: check_hess_e(&ps, fa, sol),
        });
        self.state.ps = Some(ps);
        Ok(())
    }

    fn reparam(&mut self) -> Result<(), Failure> {
        let sol = self.state.sol.as_ref().expect("solve ran");
        let ps = self.state.ps.as_ref().expect("potential ran");
        let probes = self.cfg.probes;
        let mut rr = ReparamResult::build(sol, ps)?;
        let spec = self.base;

        let stride = probes.chi_stride.max(1);
        let mut chi_failures = 0;
        if spec.nx > 4 && spec.ny > 4 {
            for j in (2..spec.ny - 2).step_by(stride) {
                for i in (2..spec.nx - 2).step_by(stride) {
                    let t = rr.lambda_node(i, j);
                    if rr.sample_chi(&[t]).is_err() {
                        chi_failures += 1;
                    }
                }
            }
        }
        let expansivity = expansivity_probe(&rr, probes.expansivity_pairs, probes.seed);
        let round_trip = round_trip_probe(&rr, probes.round_trips, probes.seed.wrapping_add(1));
        let ball = ball_inclusion_probe(
            &rr,
            (spec.nx / 2, spec.ny / 2),
            probes.ball_targets,
            probes.seed.wrapping_add(2),
        );
        write_file(self.out, "reparam.csv", |w| rr.write_csv(w))?;
        write_file(self.out, "chi.csv", |w| rr.write_chi_csv(w))?;
        let min_det = rr
            .det_dl
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        self.report.reparam = Some(ReparamReport {
            det_fd_mismatch: rr.det_fd_mismatch,
            min_det,
            image_bounds: rr.image_bounds,
            det_bound_violations: rr.det_bound_violations,
            linear_growth_constant: rr.linear_growth_constant,
            linear_growth_violations: rr.linear_growth_violations,
            max_defect_dot: rr.defect_dot.max_abs(),
            max_defect_diff: rr.defect_diff.max_abs(),
            expansivity,
            round_trip,
            ball,
            chi_samples: rr.chi_samples.len(),
            chi_failures,
        });
        Ok(())
    }

    fn decay(&mut self) -> Result<(), Failure> {
        let c = self.cfg.decay;
        let fit = decay_fit(&self.density, (c.t_min, c.t_max), c.samples)?;
        write_file(self.out, "decay.csv", |w| write_decay_csv(&fit, w))?;
        self.report.decay = Some(fit);
        Ok(())
    }

    /// Repeats solve/forms/potential on every level and records observed orders.
    fn refinement(&mut self, levels: &[GridSpec], stages: &[Stage]) -> Result<(), Failure> {
        let oracle = oracle_for(self.cfg.boundary, &self.density);
        let mut rep = RefinementReport::default();
        let result = (|| {
            for (k, spec) in levels.iter().enumerate() {
                let mut level = LevelReport {
                    nx: spec.nx,
                    ny: spec.ny,
                    h: spec.h,
                    residual_norm: None,
                    oracle_error: None,
                    closedness: None,
                    closedness_on_base_nodes: None,
                    path_discrepancy_on_base_nodes: None,
                };
                let sol = if k == 0 {
                    self.state.sol.clone().expect("solve ran")
                } else {
                    solve_on(self.cfg, &self.density, spec)?
                };
                level.residual_norm = Some(sol.residual_norm);
                level.oracle_error = oracle_error(oracle, &sol);
                if stages.contains(&Stage::Forms) {
                    let fa = assemble_forms(&sol)?;
                    let cr = closedness_residuals(&fa)?;
                    level.closedness = Some(cr.summary());
                    level.closedness_on_base_nodes =
                        Some(cr.max_norms_on_coarse_nodes(&self.base, 2)?);
                    if stages.contains(&Stage::Potential) {
                        let anchor = self.cfg.anchor.unwrap_or_default();
                        let ps =
                            recover_xstar(&sol, &fa, anchor, SignConvention::Reparametrization)?;
                        level.path_discrepancy_on_base_nodes =
                            Some(ps.e_discrepancy.max_abs_on_coarse_nodes(&self.base, 1)?);
                    }
                }
                rep.levels.push(level);
            }
            Ok::<(), Failure>(())
        })();

        let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for l in &rep.levels {
            let mut push = |name: &str, v: Option<f64>| {
                if let Some(v) = v {
                    series.entry(name.to_string()).or_default().push(v);
                }
            };
            push("residual_norm", l.residual_norm);
            push("oracle_error", l.oracle_error);
            push("d_alpha", l.closedness.map(|c| c.max_d_alpha));
            push("d_beta", l.closedness.map(|c| c.max_d_beta));
            push("d_gamma", l.closedness.map(|c| c.max_d_gamma));
            let on_base = l.closedness_on_base_nodes;
            push("d_alpha_on_base_nodes", on_base.map(|c| c[0]));
            push("d_beta_on_base_nodes", on_base.map(|c| c[1]));
            push("d_gamma_on_base_nodes", on_base.map(|c| c[2]));
            push(
                "path_discrepancy_on_base_nodes",
                l.path_discrepancy_on_base_nodes,
            );
        }
        rep.orders = series
            .into_iter()
            .filter(|(_, v)| v.len() == rep.levels.len() && v.len() > 1)
            .map(|(k, v)| (k, observed_orders(&v)))
            .collect();
        rep.error = result.as_ref().err().map(|f| f.message.clone());
        self.report.refinement = Some(rep);
        result
    }
}

/// Runs the configured stages, writing CSVs and `report.json` into `out`.
///
/// Configuration errors are returned before anything is written; stage failures are
/// recorded in the report, whose `exit_code` says how the run ended.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> anyhow::Result<RunReport> {
    let total = Instant::now();
    let stages = cfg.ordered_stages()?;
    let levels = cfg.levels()?;
    let base = levels[0];
    let mut wall_times = BTreeMap::new();

    let t = Instant::now();
    let (density, density_report) = build_density(&cfg.density);
    wall_times.insert("density".to_string(), t.elapsed().as_secs_f64());

    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        exit_code: EXIT_OK,
        density: density_report,
        grid: base,
        stages: Vec::new(),
        solve: None,
        forms: None,
        potential: None,
        reparam: None,
        identities: None,
        decay: None,
        refinement: None,
        wall_times: BTreeMap::new(),
    };

    let density = match density {
        Ok(d) => d,
        Err(f) => {
            report.exit_code = f.code;
            report.stages = stages
                .iter()
                .map(|&stage| StageStatus {
                    stage,
                    status: Status::Skipped,
                    message: Some("density rejected".into()),
                })
                .collect();
            wall_times.insert("total".to_string(), total.elapsed().as_secs_f64());
            report.wall_times = wall_times;
            write_report(out, &report)?;
            return Ok(report);
        }
    };

    let mut runner = Runner {
        cfg,
        out,
        density,
        base,
        report,
        state: State::default(),
    };
    let mut blocked = false;
    for &stage in &stages {
        // Stages without a failed dependency still run after a failure elsewhere.
        let dep_failed = stage.requires().is_some_and(|dep| {
            runner
                .report
                .stages
                .iter()
                .any(|s| s.stage == dep && s.status != Status::Ok)
        });
        if dep_failed {
            runner.report.stages.push(StageStatus {
                stage,
                status: Status::Skipped,
                message: Some(format!(
                    "stage {} did not complete",
                    stage.requires().unwrap()
                )),
            });
            continue;
        }
        let t = Instant::now();
        let result = runner.run_stage(stage);
        wall_times.insert(stage.name().to_string(), t.elapsed().as_secs_f64());
        let (status, message) = match result {
            Ok(()) => (Status::Ok, None),
            Err(f) => {
                if !blocked {
                    runner.report.exit_code = f.code;
                    blocked = true;
                }
                (Status::Failed, Some(f.message))
            }
        };
        runner.report.stages.push(StageStatus {
            stage,
            status,
            message,
        });
    }

    let solved = runner
        .report
        .stages
        .iter()
        .any(|s| s.stage == Stage::Solve && s.status == Status::Ok);
    if levels.len() > 1 && solved {
        let t = Instant::now();
        if let Err(f) = runner.refinement(&levels, &stages) {
            if !blocked {
                runner.report.exit_code = f.code;
            }
        }
        wall_times.insert("refinement".to_string(), t.elapsed().as_secs_f64());
    }

    wall_times.insert("total".to_string(), total.elapsed().as_secs_f64());
    runner.report.wall_times = wall_times;
    write_report(out, &runner.report)?;
    Ok(runner.report)
}

fn write_report(out: &Path, report: &RunReport) -> anyhow::Result<()> {
    let path = out.join("report.json");
    let mut text = serde_json::to_string_pretty(report).context("serializing report")?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
