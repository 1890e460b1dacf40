use serde::{Deserialize, Serialize};

use crate::grid::SolverGrid;
use crate::model::GameModel;
use crate::quadrature::{JumpStencil, QuadratureGrid};

use super::SolverError;

/// Discretization of the first-order drift term in x.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftStencil {
    /// One-sided in the direction of the drift; monotone on any grid.
    #[default]
    Upwind,
    /// Centered; monotone only while `σ²/(2h²) ≥ |drift|/(2h)` everywhere.
    Central,
}

/// Rates of the relaxation operator at every `(regime, x)` pair.
///
/// A node update reads
///
/// ```text
/// V ← V + ε[(V(s+k) − V)/k − rV + up·(V⁺ − V) + down·(V⁻ − V)
///          + Σ w·V(x+γz) − Γ·V + Σ q·(Vⁿ − V) + v·(V(y−h) − V)/h_y + L]
/// ```
///
/// so `g = ε·up`, `b = ε·down` and the diagonal weight is `e`.
#[derive(Debug, Clone)]
pub struct DiscreteCoefficients {
    pub eps: f64,
    pub delta: f64,
    pub r: f64,
    pub inv_k: f64,
    pub inv_hy: f64,
    pub n_x: usize,
    pub regimes: usize,
    /// Largest admissible reserve transport rate used in the bound for ε.
    pub control_max: f64,
    /// Rate on `V(x + h)`, indexed `regime * n_x + ix`.
    pub up: Vec<f64>,
    /// Rate on `V(x − h)`.
    pub down: Vec<f64>,
    /// Drift including the small-jump compensator.
    pub drift: Vec<f64>,
    /// `Σ c_j` per regime.
    pub jump_total: Vec<f64>,
    /// `Σ_{n≠i} q_in` per regime.
    pub exit: Vec<f64>,
    /// `(n, q_in)` for `n ≠ i`, per regime.
    pub coupling: Vec<Vec<(usize, f64)>>,
    pub jumps: Vec<JumpStencil>,
}

impl DiscreteCoefficients {
    #[inline]
    fn at(&self, regime: usize, ix: usize) -> usize {
        regime * self.n_x + ix
    }

    /// Up-neighbor weight `g(i; v)`; control independent.
    pub fn g(&self, regime: usize, ix: usize) -> f64 {
        self.eps * self.up[self.at(regime, ix)]
    }

    /// Down-neighbor weight.
    pub fn b(&self, regime: usize, ix: usize) -> f64 {
        self.eps * self.down[self.at(regime, ix)]
    }

    /// Total outflow rate at a node with reserve transport `v`.
    pub fn rate_sum(&self, regime: usize, ix: usize, v: f64) -> f64 {
        let k = self.at(regime, ix);
        self.r
            + self.inv_k
            + self.up[k]
            + self.down[k]
            + self.jump_total[regime]
            + self.exit[regime]
            + v * self.inv_hy
    }

    /// Diagonal weight `e(i; v)`.
    pub fn e(&self, regime: usize, ix: usize, v: f64) -> f64 {
        1.0 - self.eps * self.rate_sum(regime, ix, v)
    }

    /// Contraction factor of one relaxation sweep inside a single time level.
    pub fn level_factor(&self) -> f64 {
        1.0 - self.eps * (self.r + self.inv_k)
    }
}

/// Builds the relaxation coefficients. `quads` holds one quadrature per regime.
pub fn assemble_coefficients(
    model: &GameModel,
    grid: &SolverGrid,
    quads: &[QuadratureGrid],
    stencil: DriftStencil,
) -> Result<DiscreteCoefficients, SolverError> {
    let dynamics = &model.dynamics;
    let regimes = grid.regimes;
    if quads.len() != regimes {
        return Err(SolverError::Configuration {
            constraint: "one quadrature per regime".into(),
            detail: format!("got {} for {regimes} regimes", quads.len()),
        });
    }
    let n_x = grid.n_x;
    let h = grid.h_x;
    let mut up = vec![0.0; regimes * n_x];
    let mut down = vec![0.0; regimes * n_x];
    let mut drift = vec![0.0; regimes * n_x];

    for (i, quad) in quads.iter().enumerate() {
        let s2 = dynamics.sigma[i] * dynamics.sigma[i];
        let comp = dynamics.gamma[i] * quad.comp_mean;
        for ix in 0..n_x {
            let x = grid.x(ix);
            let d = dynamics.kappa * (dynamics.mu_log[i] - x) - comp;
            let k = i * n_x + ix;
            drift[k] = d;
            if ix == 0 {
                // outward drift is dropped at the edges, diffusion vanishes there
                up[k] = d.max(0.0) / h;
            } else if ix + 1 == n_x {
                down[k] = (-d).max(0.0) / h;
            } else {
                let diff = s2 / (2.0 * h * h);
                match stencil {
                    DriftStencil::Upwind => {
                        up[k] = diff + d.max(0.0) / h;
                        down[k] = diff + (-d).max(0.0) / h;
                    }
                    DriftStencil::Central => {
                        up[k] = diff + d / (2.0 * h);
                        down[k] = diff - d / (2.0 * h);
                    }
                }
            }
            if up[k] < 0.0 || down[k] < 0.0 {
                return Err(SolverError::Configuration {
                    constraint: "g(i;v) >= 0".into(),
                    detail: format!(
                        "regime {} at x = {x}: sigma^2/(2h^2) = {} is below |drift|/(2h) = {}; refine h_x or use the upwind stencil",
                        i + 1,
                        s2 / (2.0 * h * h),
                        d.abs() / (2.0 * h)
                    ),
                });
            }
        }
    }

    let q = &dynamics.generator;
    let coupling: Vec<Vec<(usize, f64)>> = (0..regimes)
        .map(|i| {
            (0..regimes)
                .filter(|&n| n != i && q.rate(i, n) != 0.0)
                .map(|n| (n, q.rate(i, n)))
                .collect()
        })
        .collect();
    let exit: Vec<f64> = coupling
        .iter()
        .map(|row| row.iter().map(|(_, r)| r).sum())
        .collect();
    let jump_total: Vec<f64> = quads.iter().map(|q| q.gamma_total).collect();
    let jumps: Vec<JumpStencil> = (0..regimes)
        .map(|i| quads[i].stencil(dynamics.gamma[i], grid.x_min, h, n_x))
        .collect();

    let r = model.discount_rate;
    let inv_k = 1.0 / grid.k;
    let inv_hy = 1.0 / grid.h_y;
    let mut worst: f64 = 0.0;
    for i in 0..regimes {
        for ix in 0..n_x {
            let k = i * n_x + ix;
            let rate = r
                + inv_k
                + up[k]
                + down[k]
                + jump_total[i]
                + exit[i]
                + model.u1_max * inv_hy;
            worst = worst.max(rate);
        }
    }
    let eps = 1.0 / worst;
    // Σc_n − Γ vanishes because Γ is taken as the discrete sum
    let delta = 1.0 - eps * r;
    if !(eps > 0.0 && eps.is_finite()) || !(0.0..1.0).contains(&delta) {
        return Err(SolverError::Configuration {
            constraint: "0 <= delta < 1".into(),
            detail: format!("eps = {eps}, delta = {delta}"),
        });
    }

    Ok(DiscreteCoefficients {
        eps,
        delta,
        r,
        inv_k,
        inv_hy,
        n_x,
        regimes,
        control_max: model.u1_max,
        up,
        down,
        drift,
        jump_total,
        exit,
        coupling,
        jumps,
    })
}
