//! Monte Carlo engine for the regime-switching price, the depleting reserve
//! and the players' discounted payoffs under feedback policies.

mod deviation;
mod game;
mod price;
mod regime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Violation;

pub use deviation::{
    alternatives, constant, deviation_test, flip_random, paired_gain, shift_in_x, Alternative,
    DeviationReport,
};
pub use game::{dump_paths, run_game, write_paths_csv, GameEstimate, PathRow, StartState};
pub use price::{simulate_price, simulate_price_with, PricePath};
pub use regime::{simulate_regime, simulate_regime_with, RegimePath};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid Monte Carlo settings: {}", list(.0))]
    Config(Vec<Violation>),
    #[error("{0}")]
    Domain(String),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub n_paths: usize,
    /// Euler step in years.
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            dt: 0.01,
            seed: 20_240_601,
            antithetic: true,
        }
    }
}

impl PathConfig {
    /// `k` is the solver time step when the policies come from a solve.
    pub fn validate(&self, k: Option<f64>) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n_paths == 0 {
            out.push(Violation::new("monte_carlo.n_paths", "must be >= 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(Violation::new("monte_carlo.dt", "must be > 0"));
        }
        if let Some(k) = k {
            if self.dt > k {
                out.push(Violation::new(
                    "monte_carlo.dt",
                    format!("{} is coarser than the solver time step {k}", self.dt),
                ));
            }
        }
        out
    }
}

/// Discounted payoff mean with a 95% normal confidence half-width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub std_dev: f64,
    pub n_paths: usize,
}

impl PayoffEstimate {
    /// `samples` are iid draws: single paths or antithetic pair means.
    pub fn from_samples(samples: &[f64], n_paths: usize) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        Self {
            mean,
            half_width: 1.96 * std_dev / n.sqrt(),
            std_dev,
            n_paths,
        }
    }
}
