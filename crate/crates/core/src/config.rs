//! Run configuration loaded from TOML, with sections mirroring the modules.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSpec, SolverGrid};
use crate::model::{GameModel, Violation};
use crate::simulator::PathConfig;
use crate::solver::{regime_quadratures, solve_nash, NashSolution, SolverError, SolverOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {}", list(.0))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Simpson step on the jump-mark axis.
    pub xi: f64,
    /// Overrides the model's truncation of the mark density when set.
    pub z_trunc: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            xi: 0.1,
            z_trunc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Every n-th time level is written to values.csv.
    pub values_time_stride: usize,
    /// Every n-th time level is written to policies.csv.
    pub policies_time_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            values_time_stride: 10,
            policies_time_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: GameModel,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub monte_carlo: PathConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn worked_example() -> Self {
        Self {
            model: GameModel::worked_example(),
            grid: GridSpec::default(),
            quadrature: QuadratureConfig::default(),
            solver: SolverOptions::default(),
            monte_carlo: PathConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text)?;
        let v = cfg.validate();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// The model with the quadrature truncation applied.
    pub fn effective_model(&self) -> GameModel {
        let mut m = self.model.clone();
        if let Some(z) = self.quadrature.z_trunc {
            m.dynamics.jumps.z_trunc = z;
        }
        m
    }

    pub fn solver_grid(&self) -> Result<SolverGrid, ConfigError> {
        SolverGrid::new(&self.effective_model(), &self.grid)
            .map_err(|e| ConfigError::Invalid(vec![Violation::new("grid", e.to_string())]))
    }

    /// Builds the grid and quadratures and runs the equilibrium solver.
    pub fn solve(&self) -> Result<(GameModel, SolverGrid, NashSolution), SolverError> {
        let model = self.effective_model();
        let grid = SolverGrid::new(&model, &self.grid).map_err(|e| SolverError::Configuration {
            constraint: "grid".into(),
            detail: e.to_string(),
        })?;
        let quads = regime_quadratures(&model, self.quadrature.xi)?;
        let sol = solve_nash(&model, &grid, &quads, &self.solver)?;
        Ok((model, grid, sol))
    }

    /// Every violated constraint across all sections.
    pub fn validate(&self) -> Vec<Violation> {
        let model = self.effective_model();
        let mut out = model.validate();
        let q = &self.quadrature;
        if !(q.xi > 0.0 && q.xi < 1.0) {
            out.push(Violation::new("quadrature.xi", "must lie in (0,1)"));
        }
        if let Some(z) = q.z_trunc {
            if !(z >= 1.0 && z.is_finite()) {
                out.push(Violation::new("quadrature.z_trunc", "must be finite and >= 1"));
            }
        }
        let s = &self.solver;
        if !(s.tolerance > 0.0 && s.tolerance.is_finite()) {
            out.push(Violation::new("solver.tolerance", "must be > 0"));
        }
        if s.max_sweeps == 0 {
            out.push(Violation::new("solver.max_sweeps", "must be >= 1"));
        }
        if s.nash_round_cap == 0 {
            out.push(Violation::new("solver.nash_round_cap", "must be >= 1"));
        }
        if self.output.values_time_stride == 0 {
            out.push(Violation::new("output.values_time_stride", "must be >= 1"));
        }
        if self.output.policies_time_stride == 0 {
            out.push(Violation::new("output.policies_time_stride", "must be >= 1"));
        }
        // grid construction needs a usable model
        if out.is_empty() {
            match SolverGrid::new(&model, &self.grid) {
                Ok(g) => out.extend(self.monte_carlo.validate(Some(g.k))),
                Err(e) => {
                    out.push(Violation::new("grid", e.to_string()));
                    out.extend(self.monte_carlo.validate(None));
                }
            }
        } else {
            out.extend(self.monte_carlo.validate(None));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_round_trips_and_validates() {
        let c = RunConfig::worked_example();
        assert!(c.validate().is_empty(), "{:?}", c.validate());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bundled_config_matches_the_worked_example() {
        let text = include_str!("../../../configs/worked_example.toml");
        let c = RunConfig::from_toml(text).unwrap();
        assert!(c.validate().is_empty());
        assert_eq!(c.model, GameModel::worked_example());
        assert_eq!(c.grid, GridSpec::default());
    }

    #[test]
    fn all_violations_are_collected() {
        let mut c = RunConfig::worked_example();
        c.model.theta = 1.2;
        c.quadrature.xi = 2.0;
        c.monte_carlo.n_paths = 0;
        let v = c.validate();
        let fields: Vec<_> = v.iter().map(|x| x.field.as_str()).collect();
        assert!(fields.contains(&"theta"));
        assert!(fields.contains(&"quadrature.xi"));
        assert!(fields.contains(&"monte_carlo.n_paths"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::worked_example().to_toml();
        text.push_str("\n[extra]\nfoo = 1\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn coarse_mc_step_is_rejected() {
        let mut c = RunConfig::worked_example();
        c.monte_carlo.dt = 1.0;
        let v = c.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "monte_carlo.dt");
    }
}
