//! Numerical solver for a two-player oil extraction and taxation game under a
//! regime-switching, mean-reverting jump-diffusion price.

pub mod config;
pub mod grid;
pub mod model;
pub mod output;
pub mod policy;
pub mod quadrature;
pub mod simulator;
pub mod solver;
pub mod verify;

pub use grid::{GridSpec, NodeIndex, SolverGrid, ValueField};
pub use model::{GameModel, Player};
pub use policy::PolicyField;
