use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{NodeIndex, SolverGrid, ValueField};
use crate::model::{split_profit, GameModel, Player};
use crate::policy::{node_equilibrium, NodeEquilibrium, PolicyField};

use super::{DiscreteCoefficients, SolverError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// In-place updates in node order, single writer.
    #[default]
    GaussSeidel,
    /// Double-buffered updates, parallel over x-rows.
    Jacobi,
}

/// Candidate controls for the sup: `{0, ū}` plus `interior` evenly spaced points.
pub fn control_candidates(upper: f64, interior: usize) -> Vec<f64> {
    let n = interior + 1;
    (0..=n).map(|j| upper * j as f64 / n as f64).collect()
}

/// Control-independent part of the Hamiltonian at `node` (diffusion, drift,
/// jumps, regime coupling) and the reserve difference `(V(y − h) − V)/h_y`.
#[inline]
pub(crate) fn local_terms(
    grid: &SolverGrid,
    coeffs: &DiscreteCoefficients,
    v: &[f64],
    node: NodeIndex,
) -> (f64, f64) {
    let i = grid.index(node);
    let k = node.regime * coeffs.n_x + node.ix;
    let vi = v[i];
    let mut base = 0.0;
    if node.ix + 1 < grid.n_x {
        base += coeffs.up[k] * (v[i + 1] - vi);
    }
    if node.ix > 0 {
        base += coeffs.down[k] * (v[i - 1] - vi);
    }
    let jumps = &coeffs.jumps[node.regime];
    if !jumps.is_empty() {
        let row0 = i - node.ix;
        let mut s = 0.0;
        for &(m, w) in jumps.row(node.ix) {
            s += w * v[row0 + m];
        }
        base += s - coeffs.jump_total[node.regime] * vi;
    }
    let level = grid.n_x * grid.n_y;
    for &(n, q) in &coeffs.coupling[node.regime] {
        base += q * (v[i + n * level - node.regime * level] - vi);
    }
    let dy = if node.iy > 0 {
        -((vi - v[i - grid.n_x]) / grid.h_y)
    } else {
        0.0
    };
    (base, dy)
}

/// Maximized Hamiltonian at `node` with the opponent's control frozen.
///
/// Contains diffusion, drift, jumps, regime coupling, reserve transport and
/// the running payoff; the time and discount terms are left to the caller.
/// Candidates are scanned in increasing order and replaced only on a strict
/// improvement, so ties resolve to the smaller control. The company's
/// candidates collapse to `{0}` at `y = 0`.
#[allow(clippy::too_many_arguments)]
pub fn discrete_hamiltonian(
    model: &GameModel,
    grid: &SolverGrid,
    coeffs: &DiscreteCoefficients,
    player: Player,
    v: &[f64],
    opponent: &[f64],
    node: NodeIndex,
    candidates: &[f64],
) -> (f64, f64) {
    let (base, dy) = local_terms(grid, coeffs, v, node);
    let (ctl, u) = control_part(model, grid, player, dy, opponent[grid.index(node)], node, candidates);
    (base + ctl, u)
}

#[inline]
fn control_part(
    model: &GameModel,
    grid: &SolverGrid,
    player: Player,
    dy: f64,
    other: f64,
    node: NodeIndex,
    candidates: &[f64],
) -> (f64, f64) {
    let x = grid.x(node.ix);
    let y = grid.y(node.iy);
    match player {
        Player::Company => {
            if node.iy == 0 {
                let p = model.profit_rate_unchecked(x, y, 0.0);
                return (split_profit(player, model.theta, p, other), 0.0);
            }
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &u in candidates {
                let p = model.profit_rate_unchecked(x, y, u);
                let val = u * dy + split_profit(player, model.theta, p, other);
                if val > best.0 {
                    best = (val, u);
                }
            }
            best
        }
        Player::Government => {
            let p = model.profit_rate_unchecked(x, y, other);
            let transport = other * dy;
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &u in candidates {
                let val = split_profit(player, model.theta, p, u);
                if val > best.0 {
                    best = (val, u);
                }
            }
            (transport + best.0, best.1)
        }
    }
}

/// Node controls chosen during a relaxation step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Choice {
    pub own: f64,
    /// Opponent control set jointly when the endpoint game has no pure equilibrium.
    pub mixed_partner: Option<f64>,
}

/// One time level of one player's best-response problem.
pub(crate) struct LevelProblem<'a> {
    pub model: &'a GameModel,
    pub grid: &'a SolverGrid,
    pub coeffs: &'a DiscreteCoefficients,
    pub player: Player,
    pub opponent: &'a [f64],
    pub next: &'a [f64],
    pub candidates: &'a [f64],
    pub time_index: usize,
    /// Company only: play the node-game equilibrium, with the government's
    /// reply given by the sign of `G`, instead of responding to `opponent`.
    pub equilibrium: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SweepStats {
    pub sweeps: usize,
    pub max_ratio: f64,
    pub last_residual: f64,
    pub max_abs: f64,
    pub contraction_violations: usize,
}

impl SweepStats {
    pub fn merge(&mut self, o: &SweepStats) {
        self.sweeps += o.sweeps;
        self.max_ratio = self.max_ratio.max(o.max_ratio);
        self.last_residual = self.last_residual.max(o.last_residual);
        self.max_abs = self.max_abs.max(o.max_abs);
        self.contraction_violations += o.contraction_violations;
    }
}

impl LevelProblem<'_> {
    #[inline]
    fn relax(&self, v: &[f64], i: usize) -> (f64, Choice) {
        let node = self.grid.node(i);
        let (base, dy) = local_terms(self.grid, self.coeffs, v, node);
        let other = self.opponent[i];
        let mut choice = Choice {
            own: 0.0,
            mixed_partner: None,
        };
        let ctl = match self.equilibrium_at(node, dy) {
            Some(eq) => {
                let x = self.grid.x(node.ix);
                let y = self.grid.y(node.iy);
                let p = self.model.profit_rate_unchecked(x, y, eq.u1);
                choice.own = eq.u1;
                choice.mixed_partner = eq.mixed.then_some(eq.u2);
                eq.u1 * dy + split_profit(Player::Company, self.model.theta, p, eq.u2)
            }
            None => {
                let (val, u) = control_part(
                    self.model,
                    self.grid,
                    self.player,
                    dy,
                    other,
                    node,
                    self.candidates,
                );
                choice.own = u;
                val
            }
        };
        let c = self.coeffs;
        let vi = v[i];
        (
            vi + c.eps * ((self.next[i] - vi) * c.inv_k - c.r * vi + base + ctl),
            choice,
        )
    }

    #[inline]
    fn equilibrium_at(&self, node: NodeIndex, dy: f64) -> Option<NodeEquilibrium> {
        if !self.equilibrium || node.iy == 0 {
            return None;
        }
        Some(node_equilibrium(
            self.model,
            self.grid.x(node.ix),
            self.grid.y(node.iy),
            -dy,
        ))
    }

    fn blowup(&self, i: usize, value: f64) -> SolverError {
        SolverError::Blowup {
            player: self.player,
            time_index: self.time_index,
            node: self.grid.node(i),
            value,
        }
    }

    pub fn sweep_gauss_seidel(&self, v: &mut [f64]) -> Result<f64, SolverError> {
        let mut res: f64 = 0.0;
        for i in 0..v.len() {
            let (new, _) = self.relax(v, i);
            if !new.is_finite() {
                return Err(self.blowup(i, new));
            }
            res = res.max((new - v[i]).abs());
            v[i] = new;
        }
        Ok(res)
    }

    pub fn sweep_jacobi(&self, v: &[f64], out: &mut [f64]) -> Result<f64, SolverError> {
        let n_x = self.grid.n_x;
        let res = out
            .par_chunks_mut(n_x)
            .enumerate()
            .map(|(row, chunk)| {
                let mut r: f64 = 0.0;
                for (ix, o) in chunk.iter_mut().enumerate() {
                    let i = row * n_x + ix;
                    let (new, _) = self.relax(v, i);
                    *o = new;
                    r = r.max((new - v[i]).abs());
                }
                r
            })
            .reduce(|| 0.0, f64::max);
        if let Some(i) = out.iter().position(|x| !x.is_finite()) {
            return Err(self.blowup(i, out[i]));
        }
        Ok(res)
    }

    /// Iterates the relaxation to `res ≤ tol·(1 + ‖V‖)`, starting from `v`.
    pub fn solve(
        &self,
        v: &mut Vec<f64>,
        mode: SweepMode,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<SweepStats, SolverError> {
        let mut stats = SweepStats::default();
        let mut scratch = match mode {
            SweepMode::Jacobi => vec![0.0; v.len()],
            SweepMode::GaussSeidel => Vec::new(),
        };
        let mut prev: Option<f64> = None;
        let factor = self.coeffs.delta;
        loop {
            let res = match mode {
                SweepMode::GaussSeidel => self.sweep_gauss_seidel(v)?,
                SweepMode::Jacobi => {
                    let r = self.sweep_jacobi(v, &mut scratch)?;
                    std::mem::swap(v, &mut scratch);
                    r
                }
            };
            stats.sweeps += 1;
            if let Some(p) = prev {
                if p > 0.0 {
                    stats.max_ratio = stats.max_ratio.max(res / p);
                }
                if res > factor * p + 1e-12 {
                    stats.contraction_violations += 1;
                }
            }
            prev = Some(res);
            stats.last_residual = res;
            let norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            stats.max_abs = norm;
            if res <= tol * (1.0 + norm) {
                return Ok(stats);
            }
            if stats.sweeps >= max_sweeps {
                return Err(SolverError::SweepLimit {
                    player: self.player,
                    time_index: self.time_index,
                    sweeps: stats.sweeps,
                    residual: res,
                });
            }
        }
    }

    /// Argmax controls at the given values; `partner` and `mixed` receive the
    /// jointly chosen opponent control where the node game is mixed.
    pub fn controls(&self, v: &[f64], own: &mut [f64], partner: &mut [f64], mixed: &mut [bool]) {
        own.par_iter_mut()
            .zip(partner.par_iter_mut())
            .zip(mixed.par_iter_mut())
            .enumerate()
            .for_each(|(i, ((u, p), m))| {
                let c = self.relax(v, i).1;
                *u = c.own;
                *m = c.mixed_partner.is_some();
                *p = c.mixed_partner.unwrap_or(self.opponent[i]);
            });
    }
}

/// One application of the relaxation operator at every non-terminal node of
/// both players, sweeping backward in time. Policies are held fixed; the
/// terminal level is never touched. Returns the sup-norm change.
pub fn fixed_point_sweep(
    model: &GameModel,
    grid: &SolverGrid,
    coeffs: &DiscreteCoefficients,
    levels: &mut [ValueField],
    policies: &PolicyField,
    mode: SweepMode,
) -> Result<f64, SolverError> {
    let candidates = |p: Player| control_candidates(policies.bound(p), 0);
    let snapshot = match mode {
        SweepMode::Jacobi => Some(levels.to_vec()),
        SweepMode::GaussSeidel => None,
    };
    let mut res: f64 = 0.0;
    for player in Player::BOTH {
        let cands = candidates(player);
        for it in (0..levels.len() - 1).rev() {
            let (head, tail) = levels.split_at_mut(it + 1);
            let next_field = match &snapshot {
                Some(s) => &s[it + 1],
                None => &tail[0],
            };
            let problem = LevelProblem {
                model,
                grid,
                coeffs,
                player,
                opponent: policies.level(player.opponent(), it),
                next: next_field.player(player),
                candidates: &cands,
                time_index: it,
                equilibrium: false,
            };
            let cur = head[it].player_mut(player);
            let r = match mode {
                SweepMode::GaussSeidel => problem.sweep_gauss_seidel(cur)?,
                SweepMode::Jacobi => {
                    let mut out = vec![0.0; cur.len()];
                    let r = problem.sweep_jacobi(cur, &mut out)?;
                    cur.copy_from_slice(&out);
                    r
                }
            };
            res = res.max(r);
        }
    }
    Ok(res)
}
