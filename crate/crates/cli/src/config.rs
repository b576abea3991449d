//! Run configuration: a single JSON object.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use musurf_core::{Anchor, Boundary, DensitySpec, GridSpec, SolveConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Solve,
    Forms,
    Potential,
    Reparam,
    Identities,
    Decay,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Solve,
        Stage::Forms,
        Stage::Potential,
        Stage::Reparam,
        Stage::Identities,
        Stage::Decay,
    ];

    /// The stage whose output this one consumes.
    pub fn requires(self) -> Option<Stage> {
        match self {
            Stage::Forms => Some(Stage::Solve),
            Stage::Potential => Some(Stage::Forms),
            Stage::Reparam => Some(Stage::Potential),
            Stage::Solve | Stage::Identities | Stage::Decay => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Solve => "solve",
            Stage::Forms => "forms",
            Stage::Potential => "potential",
            Stage::Reparam => "reparam",
            Stage::Identities => "identities",
            Stage::Decay => "decay",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .with_context(|| {
                format!("unknown stage {s:?}; expected one of solve, forms, potential, reparam, identities, decay")
            })
    }
}

/// Rectangle and node counts; the spacing must come out equal in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridConfig {
    pub fn spec(&self) -> musurf_core::Result<GridSpec> {
        GridSpec::new(self.x0, self.y0, self.x1, self.y1, self.nx, self.ny)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            t_min: 1e2,
            t_max: 1e4,
            samples: 200,
        }
    }
}

/// Random probes of the reparam stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub seed: u64,
    pub expansivity_pairs: usize,
    pub round_trips: usize,
    pub ball_targets: usize,
    /// `χ` is sampled at `Λ` of every `chi_stride`-th node, two rings inside.
    pub chi_stride: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            expansivity_pairs: 1000,
            round_trips: 1000,
            ball_targets: 200,
            chi_stride: 4,
        }
    }
}

fn default_outputs() -> PathBuf {
    PathBuf::from("musurf-out")
}

fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub density: DensitySpec,
    pub grid: GridConfig,
    pub boundary: Option<Boundary>,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    /// Extra `nx` values forming an h-halving series after `grid.nx`.
    #[serde(default)]
    pub refinement: Vec<usize>,
    #[serde(default)]
    pub anchor: Option<Anchor>,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("parsing run configuration")?;
        Ok(cfg)
    }

    /// Requested stages in execution order, deduplicated; dependencies must be requested too.
    pub fn ordered_stages(&self) -> anyhow::Result<Vec<Stage>> {
        let mut stages = self.stages.clone();
        stages.sort();
        stages.dedup();
        for &s in &stages {
            if let Some(dep) = s.requires() {
                if !stages.contains(&dep) {
                    bail!("stage {s} needs stage {dep}; add it to the stage list");
                }
            }
        }
        if stages.contains(&Stage::Solve) && self.boundary.is_none() {
            bail!("stage solve needs a boundary block");
        }
        Ok(stages)
    }

    /// Base grid followed by the refinement levels.
    pub fn levels(&self) -> anyhow::Result<Vec<GridSpec>> {
        let base = self.grid.spec().context("grid block")?;
        let mut out = vec![base];
        for &nx in &self.refinement {
            let prev = *out.last().unwrap();
            if nx < 2 || (nx - 1) != 2 * (prev.nx - 1) {
                bail!(
                    "refinement level nx = {nx} does not halve h of the previous level (nx = {})",
                    prev.nx
                );
            }
            let ny = 2 * (prev.ny - 1) + 1;
            out.push(
                GridSpec::new(base.x0, base.y0, base.x1, base.y1, nx, ny)
                    .with_context(|| format!("refinement level nx = {nx}"))?,
            );
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{
        "density": {"kind": "minimal"},
        "grid": {"x0": -1.0, "y0": -1.0, "x1": 1.0, "y1": 1.0, "nx": 9, "ny": 9},
        "boundary": {"name": "scherk"}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(MIN).unwrap();
        assert_eq!(c.stages, Stage::ALL.to_vec());
        assert_eq!(c.solve, SolveConfig::default());
        assert_eq!(c.ordered_stages().unwrap(), Stage::ALL.to_vec());
        assert_eq!(c.levels().unwrap().len(), 1);
    }

    #[test]
    fn missing_dependency_is_rejected() {
        let mut c = RunConfig::from_json(MIN).unwrap();
        c.stages = vec![Stage::Potential, Stage::Solve];
        assert!(c.ordered_stages().is_err());
        c.stages = vec![Stage::Decay, Stage::Identities];
        assert_eq!(
            c.ordered_stages().unwrap(),
            vec![Stage::Identities, Stage::Decay]
        );
    }

    #[test]
    fn refinement_must_halve() {
        let mut c = RunConfig::from_json(MIN).unwrap();
        c.refinement = vec![17, 33];
        let l = c.levels().unwrap();
        assert_eq!(l[2].nx, 33);
        assert!((l[0].h / l[2].h - 4.0).abs() < 1e-12);
        c.refinement = vec![18];
        assert!(c.levels().is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("plot".parse::<Stage>().is_err());
    }

    #[test]
    fn unknown_fields_are_errors() {
        let bad = MIN.replace("\"boundary\"", "\"boundry\"");
        assert!(RunConfig::from_json(&bad).is_err());
    }
}
