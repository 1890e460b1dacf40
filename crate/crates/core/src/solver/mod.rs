//! Monotone relaxation scheme for the coupled Hamilton-Jacobi-Isaacs system
//! and the best-response loop that turns it into a Nash equilibrium.

mod coefficients;
mod nash;
mod sweep;

use thiserror::Error;

use crate::grid::NodeIndex;
use crate::model::{ModelError, Player};

pub use coefficients::{assemble_coefficients, DiscreteCoefficients, DriftStencil};
pub use nash::{
    best_response, regime_quadratures, solve_nash, BestResponse, NashSolution, Schedule,
    SolveReport, SolverOptions, UpdateOrder,
};
pub use sweep::{control_candidates, discrete_hamiltonian, fixed_point_sweep, SweepMode};

/// Changed nodes are recorded as `(player, time index, node)`.
pub type NodeSet = Vec<(Player, usize, NodeIndex)>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("configuration error: {constraint} violated: {detail}")]
    Configuration { constraint: String, detail: String },
    #[error(
        "numerical blowup for player {player} at time index {time_index}, regime {}, ix {}, iy {}: {value}",
        node.regime + 1, node.ix, node.iy
    )]
    Blowup {
        player: Player,
        time_index: usize,
        node: NodeIndex,
        value: f64,
    },
    #[error("player {player} level {time_index} not converged after {sweeps} sweeps (residual {residual})")]
    SweepLimit {
        player: Player,
        time_index: usize,
        sweeps: usize,
        residual: f64,
    },
    #[error("policies still changing after {rounds} best-response rounds at {} nodes", nodes.len())]
    NonConvergence {
        rounds: usize,
        nodes: NodeSet,
        report: Box<SolveReport>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SolverError {
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, SolverError::SweepLimit { .. } | SolverError::NonConvergence { .. })
    }
}
