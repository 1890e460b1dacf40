use serde::{Deserialize, Serialize};

use crate::grid::{a_priori_bound, SolverGrid, ValueField};
use crate::model::{GameModel, Player};
use crate::policy::PolicyField;
use crate::quadrature::QuadratureGrid;

use super::sweep::{control_candidates, LevelProblem, SweepStats};
use super::{assemble_coefficients, DiscreteCoefficients, DriftStencil, SolverError, SweepMode};

/// How backward time levels are iterated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Each level is iterated to tolerance before moving one step back.
    #[default]
    Marching,
    /// Whole-horizon sweeps repeated until the global residual is small.
    Global,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    CompanyFirst,
    GovernmentFirst,
}

impl UpdateOrder {
    fn players(self) -> [Player; 2] {
        match self {
            UpdateOrder::CompanyFirst => [Player::Company, Player::Government],
            UpdateOrder::GovernmentFirst => [Player::Government, Player::Company],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub mode: SweepMode,
    pub schedule: Schedule,
    pub stencil: DriftStencil,
    /// Interior control points added to `{0, ū}` for brute-force checks.
    pub control_grid: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub nash_round_cap: usize,
    pub order: UpdateOrder,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mode: SweepMode::GaussSeidel,
            schedule: Schedule::Marching,
            stencil: DriftStencil::Upwind,
            control_grid: 0,
            tolerance: 1e-8,
            max_sweeps: 20_000,
            nash_round_cap: 50,
            order: UpdateOrder::CompanyFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub measured_delta: f64,
    pub nash_rounds: usize,
    pub converged: bool,
    pub eps: f64,
    pub delta: f64,
    pub contraction_violations: usize,
    pub a_priori_bound: [f64; 2],
    pub max_abs_value: [f64; 2],
    pub changed_nodes_last_round: usize,
    /// Nodes resolved by the mixed equilibrium of the endpoint game.
    pub mixed_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct NashSolution {
    /// One field per time level, index 0 at `t = 0`.
    pub values: Vec<ValueField>,
    pub policies: PolicyField,
    pub report: SolveReport,
    pub coefficients: DiscreteCoefficients,
}

impl NashSolution {
    pub fn value_at(&self, grid: &SolverGrid, player: Player, it: usize, node: crate::grid::NodeIndex) -> f64 {
        self.values[it].get(grid, player, node)
    }
}

/// One player's value levels and argmax controls against a frozen opponent.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub levels: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    /// Opponent controls, replaced at nodes resolved by the mixed equilibrium.
    pub partner: Vec<f64>,
    pub mixed: Vec<bool>,
    pub sweeps: usize,
    pub residual: f64,
    pub measured_delta: f64,
    pub contraction_violations: usize,
    pub max_abs: f64,
}

#[allow(clippy::too_many_arguments)]
fn level_problem<'a>(
    model: &'a GameModel,
    grid: &'a SolverGrid,
    coeffs: &'a DiscreteCoefficients,
    player: Player,
    policies: &'a PolicyField,
    candidates: &'a [f64],
    it: usize,
    next: &'a [f64],
) -> LevelProblem<'a> {
    LevelProblem {
        model,
        grid,
        coeffs,
        player,
        opponent: policies.level(player.opponent(), it),
        next,
        candidates,
        time_index: it,
        equilibrium: player == Player::Company,
    }
}

fn terminal_levels(model: &GameModel, grid: &SolverGrid, player: Player) -> Vec<f64> {
    ValueField::terminal(model, grid).player(player).to_vec()
}

/// Solves one player's control problem with the opponent's policy fixed.
///
/// For the company, nodes whose endpoint game has no pure equilibrium are
/// resolved jointly and the government's control there is returned in
/// `partner`. For the government, controls at nodes already marked mixed in
/// `policies` are kept; its Hamiltonian is flat in `u2` there.
pub fn best_response(
    model: &GameModel,
    grid: &SolverGrid,
    coeffs: &DiscreteCoefficients,
    player: Player,
    policies: &PolicyField,
    opts: &SolverOptions,
) -> Result<BestResponse, SolverError> {
    let n_t = grid.n_t;
    let n = grid.level_len();
    let candidates = control_candidates(policies.bound(player), opts.control_grid);
    let terminal = terminal_levels(model, grid, player);
    let mut levels: Vec<Vec<f64>> = vec![terminal.clone(); n_t];
    let mut controls = vec![0.0; n * n_t];
    let mut partner = policies.controls(player.opponent()).to_vec();
    let mut mixed = vec![false; n * n_t];
    let mut stats = SweepStats::default();

    match opts.schedule {
        Schedule::Marching => {
            for it in (0..n_t - 1).rev() {
                let next = levels[it + 1].clone();
                let mut cur = next.clone();
                let p = level_problem(model, grid, coeffs, player, policies, &candidates, it, &next);
                let s = p.solve(&mut cur, opts.mode, opts.tolerance, opts.max_sweeps)?;
                stats.merge(&s);
                levels[it] = cur;
            }
        }
        Schedule::Global => {
            let mut prev: Option<f64> = None;
            loop {
                let mut res: f64 = 0.0;
                for it in (0..n_t - 1).rev() {
                    let (head, tail) = levels.split_at_mut(it + 1);
                    let p = level_problem(model, grid, coeffs, player, policies, &candidates, it, &tail[0]);
                    let r = match opts.mode {
                        SweepMode::GaussSeidel => p.sweep_gauss_seidel(&mut head[it])?,
                        SweepMode::Jacobi => {
                            let mut out = vec![0.0; n];
                            let r = p.sweep_jacobi(&head[it], &mut out)?;
                            head[it] = out;
                            r
                        }
                    };
                    res = res.max(r);
                }
                stats.sweeps += 1;
                if let Some(pr) = prev {
                    if pr > 0.0 {
                        stats.max_ratio = stats.max_ratio.max(res / pr);
                    }
                    if res > coeffs.delta * pr + 1e-12 {
                        stats.contraction_violations += 1;
                    }
                }
                prev = Some(res);
                stats.last_residual = res;
                let norm = levels
                    .iter()
                    .flat_map(|l| l.iter())
                    .fold(0.0f64, |m, x| m.max(x.abs()));
                stats.max_abs = norm;
                if res <= opts.tolerance * (1.0 + norm) {
                    break;
                }
                if stats.sweeps >= opts.max_sweeps {
                    return Err(SolverError::SweepLimit {
                        player,
                        time_index: 0,
                        sweeps: stats.sweeps,
                        residual: res,
                    });
                }
            }
        }
    }

    for it in 0..n_t {
        let next: &[f64] = if it + 1 < n_t { &levels[it + 1] } else { &terminal };
        let p = level_problem(model, grid, coeffs, player, policies, &candidates, it, next);
        let span = it * n..(it + 1) * n;
        p.controls(
            &levels[it],
            &mut controls[span.clone()],
            &mut partner[span.clone()],
            &mut mixed[span],
        );
    }
    if player == Player::Government {
        for (k, m) in policies.mixed.iter().enumerate() {
            if *m {
                controls[k] = policies.u2[k];
                mixed[k] = true;
            }
        }
    }
    let max_abs = levels
        .iter()
        .flat_map(|l| l.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(BestResponse {
        levels,
        controls,
        partner,
        mixed,
        sweeps: stats.sweeps,
        residual: stats.last_residual,
        measured_delta: stats.max_ratio,
        contraction_violations: stats.contraction_violations,
        max_abs,
    })
}

/// Builds one quadrature per regime.
pub fn regime_quadratures(model: &GameModel, xi: f64) -> Result<Vec<QuadratureGrid>, SolverError> {
    (0..model.n_regimes())
        .map(|i| QuadratureGrid::build(&model.dynamics.jumps, i, xi).map_err(SolverError::from))
        .collect()
}

/// Alternating best responses until neither policy field changes.
pub fn solve_nash(
    model: &GameModel,
    grid: &SolverGrid,
    quads: &[QuadratureGrid],
    opts: &SolverOptions,
) -> Result<NashSolution, SolverError> {
    let coeffs = assemble_coefficients(model, grid, quads, opts.stencil)?;
    let mut policies = PolicyField::zeros(grid, model);
    let mut values: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut report = SolveReport {
        iterations: 0,
        residual: 0.0,
        measured_delta: 0.0,
        nash_rounds: 0,
        converged: false,
        eps: coeffs.eps,
        delta: coeffs.delta,
        contraction_violations: 0,
        a_priori_bound: a_priori_bound(model, grid),
        max_abs_value: [0.0; 2],
        changed_nodes_last_round: 0,
        mixed_nodes: 0,
    };

    let mut changed = Vec::new();
    for round in 1..=opts.nash_round_cap.max(1) {
        let before = policies.clone();
        report.residual = 0.0;
        for player in opts.order.players() {
            let br = best_response(model, grid, &coeffs, player, &policies, opts)?;
            policies.controls_mut(player).copy_from_slice(&br.controls);
            if player == Player::Company {
                policies.u2.copy_from_slice(&br.partner);
                policies.mixed.copy_from_slice(&br.mixed);
            }
            report.iterations += br.sweeps;
            report.residual = report.residual.max(br.residual);
            report.measured_delta = report.measured_delta.max(br.measured_delta);
            report.contraction_violations += br.contraction_violations;
            report.max_abs_value[player.index()] = br.max_abs;
            values[player.index()] = br.levels;
        }
        report.nash_rounds = round;
        changed = before.differing_nodes(&policies);
        report.changed_nodes_last_round = changed.len();
        report.mixed_nodes = policies.mixed_count();
        if changed.is_empty() {
            report.converged = true;
            break;
        }
    }

    if !report.converged {
        return Err(SolverError::NonConvergence {
            rounds: report.nash_rounds,
            nodes: changed,
            report: Box::new(report),
        });
    }
    let [v1, v2] = values;
    let fields = v1
        .iter()
        .zip(&v2)
        .enumerate()
        .map(|(it, (a, b))| ValueField::from_players(it, a, b))
        .collect();
    Ok(NashSolution {
        values: fields,
        policies,
        report,
        coefficients: coeffs,
    })
}
