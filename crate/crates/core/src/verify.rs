//! Property checks behind the `verify` command.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::grid::{GridSpec, NodeIndex, SolverGrid};
use crate::model::{GameModel, JumpSpec, Player, PriceDynamics, RegimeGenerator};
use crate::policy::{region_boundaries, PolicyField};
use crate::quadrature::QuadratureGrid;
use crate::simulator::{
    deviation_test, run_game, simulate_price_with, simulate_regime_with, PathConfig, RegimePath,
    SimError, StartState,
};
use crate::solver::{
    assemble_coefficients, regime_quadratures, solve_nash, NashSolution, SolveReport,
    SolverError, SolverOptions,
};

/// One row of the pass/fail table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn push(&mut self, name: &str, start: Instant, result: Result<String, String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                out,
                "{}  {:width$}  {:>7.1}s  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.seconds,
                c.detail,
            )?;
        }
        Ok(())
    }
}

/// Contraction, monotonicity and convergence figures of a finished solve.
pub fn contraction_holds(r: &SolveReport) -> bool {
    r.delta < 1.0 && r.measured_delta <= r.delta + 1e-12 && r.contraction_violations == 0
}

pub fn bounded(r: &SolveReport) -> bool {
    (0..2).all(|p| r.max_abs_value[p].is_finite() && r.max_abs_value[p] <= r.a_priori_bound[p])
}

/// Comparison of the tax region with the root of `G(ū₁) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxBoundary {
    /// Nodes with a pure-strategy control pair.
    pub nodes_checked: usize,
    /// Nodes where `u2 = ū₂` disagrees with `u1 = ū₁ and x above the root`.
    pub sign_mismatches: usize,
    pub slices_total: usize,
    /// Slices where the company extracts at the first node above the root.
    pub slices_checked: usize,
    /// Checked slices whose tax threshold is more than `h_x` from the root.
    pub slices_off: usize,
    pub max_offset: f64,
    pub h_x: f64,
}

impl TaxBoundary {
    pub fn passed(&self) -> bool {
        self.sign_mismatches == 0 && self.slices_off == 0 && self.slices_checked > 0
    }
}

/// Log-price where full extraction breaks even at reserve `y`.
pub fn tax_root(model: &GameModel, y: f64) -> Option<f64> {
    let p = model.cost.unit_cost(y) + model.cost.a / model.u1_max;
    (p > 0.0 && model.u1_max > 0.0).then(|| p.ln())
}

pub fn tax_boundary(model: &GameModel, grid: &SolverGrid, policies: &PolicyField) -> TaxBoundary {
    let a = &policies.axes;
    let u1_max = policies.u1_max;
    let u2_max = policies.u2_max;
    let mut out = TaxBoundary {
        nodes_checked: 0,
        sign_mismatches: 0,
        slices_total: 0,
        slices_checked: 0,
        slices_off: 0,
        max_offset: 0.0,
        h_x: grid.h_x,
    };
    for it in 0..a.t.len() {
        for i in 0..a.regimes {
            for iy in 0..a.y.len() {
                let Some(root) = tax_root(model, a.y[iy]) else {
                    continue;
                };
                for ix in 0..a.x.len() {
                    let k = a.index(it, i, ix, iy);
                    if policies.mixed[k] {
                        continue;
                    }
                    out.nodes_checked += 1;
                    let expect = policies.u1[k] == u1_max && a.x[ix] > root;
                    if (policies.u2[k] == u2_max) != expect {
                        out.sign_mismatches += 1;
                    }
                }
            }
        }
    }
    for b in region_boundaries(policies) {
        if b.player != Player::Government {
            continue;
        }
        let Some(root) = tax_root(model, b.y) else {
            continue;
        };
        out.slices_total += 1;
        let iy = grid.nearest_iy(b.y);
        let Some(ix) = (0..a.x.len()).find(|&ix| a.x[ix] > root) else {
            continue;
        };
        let k = a.index(b.time_index, b.regime, ix, iy);
        if ix == 0 || policies.mixed[k] || policies.u1[k] != u1_max {
            continue;
        }
        out.slices_checked += 1;
        match b.kind.threshold() {
            Some(x) => {
                let d = (x - root).abs();
                out.max_offset = out.max_offset.max(d);
                if d > grid.h_x {
                    out.slices_off += 1;
                }
            }
            None => out.slices_off += 1,
        }
    }
    out
}

/// Sample moments of `X(T)` against the closed-form OU law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub mean: f64,
    pub expected_mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub expected_variance: f64,
    pub variance_se: f64,
}

impl MomentCheck {
    pub fn z_scores(&self) -> (f64, f64) {
        (
            (self.mean - self.expected_mean).abs() / self.mean_se,
            (self.variance - self.expected_variance).abs() / self.variance_se,
        )
    }

    pub fn within(&self, z: f64) -> bool {
        let (a, b) = self.z_scores();
        a <= z && b <= z
    }
}

/// Terminal log-prices of independent single-regime paths without jumps.
pub fn terminal_samples(dynamics: &PriceDynamics, x0: f64, horizon: f64, n_paths: usize, dt: f64, seed: u64) -> Vec<f64> {
    let fixed = RegimePath {
        times: vec![0.0],
        regimes: vec![0],
        end: horizon,
    };
    (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            *simulate_price_with(dynamics, &fixed, x0, dt, &mut rng)
                .x
                .last()
                .unwrap_or(&x0)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn ou_moments(
    kappa: f64,
    mu: f64,
    sigma: f64,
    x0: f64,
    horizon: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> MomentCheck {
    let dynamics = PriceDynamics {
        kappa,
        mu_log: vec![mu],
        sigma: vec![sigma],
        gamma: vec![1.0],
        generator: RegimeGenerator::zero(1),
        jumps: JumpSpec::none(1),
    };
    let xs = terminal_samples(&dynamics, x0, horizon, n_paths, dt, seed);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    let decay = (-kappa * horizon).exp();
    let expected_variance = if kappa > 0.0 {
        sigma * sigma * (1.0 - decay * decay) / (2.0 * kappa)
    } else {
        sigma * sigma * horizon
    };
    MomentCheck {
        mean,
        expected_mean: x0 * decay + mu * (1.0 - decay),
        mean_se: (variance / n).sqrt(),
        variance,
        expected_variance,
        variance_se: ((m4 - m2 * m2) / n).sqrt(),
    }
}

/// Empirical switching rate against the generator entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub from: usize,
    pub to: usize,
    pub events: usize,
    pub exposure: f64,
    pub estimate: f64,
    pub expected: f64,
    /// Poisson standard error at the expected rate.
    pub se: f64,
}

impl RateCheck {
    pub fn z_score(&self) -> f64 {
        if self.se > 0.0 {
            (self.estimate - self.expected).abs() / self.se
        } else if self.estimate == self.expected {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Simulates `path_years` of the chain in paths of length `path_length`,
/// starting paths in each regime in turn.
pub fn ctmc_rates(q: &RegimeGenerator, path_years: f64, path_length: f64, seed: u64) -> Vec<RateCheck> {
    let n = q.n_regimes();
    let n_paths = (path_years / path_length).ceil().max(1.0) as usize;
    let paths: Vec<RegimePath> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            simulate_regime_with(q, j % n, 0.0, path_length, &mut rng)
        })
        .collect();
    let mut occupation = vec![0.0; n];
    let mut counts = vec![vec![0usize; n]; n];
    for p in &paths {
        for (i, o) in p.occupation(n).iter().enumerate() {
            occupation[i] += o;
        }
        for (from, row) in counts.iter_mut().enumerate() {
            for (to, c) in row.iter_mut().enumerate() {
                if from != to {
                    *c += p.transitions(from, to);
                }
            }
        }
    }
    let mut out = Vec::new();
    for (from, row) in counts.iter().enumerate() {
        for (to, &events) in row.iter().enumerate() {
            if from == to {
                continue;
            }
            let e = occupation[from];
            let expected = q.rate(from, to);
            out.push(RateCheck {
                from,
                to,
                events,
                exposure: e,
                estimate: if e > 0.0 { events as f64 / e } else { 0.0 },
                expected,
                se: if e > 0.0 { (expected / e).sqrt() } else { f64::INFINITY },
            });
        }
    }
    out
}

/// Observed order of the Simpson rule on a smooth integrand against the
/// model's mark density, from steps `xi` and `xi/2`.
pub fn quadrature_order(jumps: &JumpSpec, xi: f64) -> Result<f64, crate::model::ModelError> {
    let unit = JumpSpec {
        intensity: vec![1.0],
        ..jumps.clone()
    };
    let integral = |step: f64| -> Result<(f64, f64), crate::model::ModelError> {
        let q = QuadratureGrid::build(&unit, 0, step)?;
        let s = q
            .nodes_full
            .iter()
            .zip(&q.weights_full)
            .map(|(z, w)| w * (0.4 + z).cos())
            .sum();
        Ok((q.xi, s))
    };
    let (_, exact) = integral(xi / 32.0)?;
    let (ha, a) = integral(xi)?;
    let (hb, b) = integral(xi / 2.0)?;
    let (ea, eb) = ((a - exact).abs(), (b - exact).abs());
    if ea < 1e-13 {
        // already exact to round-off
        return Ok(f64::INFINITY);
    }
    Ok((ea / eb.max(1e-300)).ln() / (ha / hb).ln())
}

/// PDE value against the Monte Carlo payoff at one start node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    pub player: u8,
    pub regime: usize,
    pub x: f64,
    pub y: f64,
    pub pde: f64,
    pub mc: f64,
    pub half_width: f64,
    /// `h_x` times the local slope of `V` in `x`.
    pub allowance: f64,
    pub tolerance: f64,
}

impl CrossCheck {
    pub fn passed(&self) -> bool {
        (self.pde - self.mc).abs() <= self.tolerance
    }
}

/// Interior start nodes spread over regimes, prices and reserves.
pub fn default_states(model: &GameModel, grid: &SolverGrid) -> Vec<NodeIndex> {
    let offsets = [0.0, -0.4, 0.3, -0.8, 0.5];
    let fractions = [0.5, 0.25, 0.75, 0.1, 0.9];
    let n = model.n_regimes();
    offsets
        .iter()
        .zip(fractions)
        .enumerate()
        .map(|(j, (dx, fy))| {
            let regime = j % n;
            let x = model.dynamics.mu_log[regime] + dx;
            let ix = grid.nearest_ix(x).clamp(1, grid.n_x - 2);
            let iy = ((fy * (grid.n_y - 1) as f64).round() as usize).clamp(1, grid.n_y - 1);
            NodeIndex::new(regime, ix, iy)
        })
        .collect()
}

pub fn cross_validate(
    model: &GameModel,
    grid: &SolverGrid,
    sol: &NashSolution,
    states: &[NodeIndex],
    cfg: &PathConfig,
) -> Result<Vec<CrossCheck>, SimError> {
    let mut out = Vec::new();
    for &node in states {
        let start = StartState {
            t0: 0.0,
            x0: grid.x(node.ix),
            y0: grid.y(node.iy),
            regime: node.regime,
        };
        let est = run_game(model, &sol.policies, start, cfg)?;
        for player in Player::BOTH {
            let v = sol.values[0].player(player);
            let at = |ix: usize| v[grid.index(NodeIndex::new(node.regime, ix, node.iy))];
            let pde = at(node.ix);
            let allowance = (at(node.ix + 1) - pde).abs().max((pde - at(node.ix - 1)).abs());
            let e = est.player(player);
            out.push(CrossCheck {
                player: player.number(),
                regime: node.regime,
                x: start.x0,
                y: start.y0,
                pde,
                mc: e.mean,
                half_width: e.half_width,
                allowance,
                tolerance: (0.02 * pde.abs()).max(e.half_width + allowance),
            });
        }
    }
    Ok(out)
}

/// Sup-norm gaps of the `t = 0` values between successive grids, measured on
/// the coarsest nodes. `base` must fix `n_t` and both x bounds.
pub fn grid_refinement(
    model: &GameModel,
    base: &GridSpec,
    levels: usize,
    xi: f64,
    opts: &SolverOptions,
) -> Result<Vec<[f64; 2]>, SolverError> {
    let quads = regime_quadratures(model, xi)?;
    let coarse = SolverGrid::new(model, base).map_err(|e| SolverError::Configuration {
        constraint: "grid".into(),
        detail: e.to_string(),
    })?;
    let mut fields = Vec::new();
    for l in 0..levels {
        let f = 1usize << l;
        let spec = GridSpec {
            n_x: (base.n_x - 1) * f + 1,
            n_y: (base.n_y - 1) * f + 1,
            n_t: base.n_t.map(|n| (n - 1) * f + 1),
            x_min: Some(coarse.x_min),
            x_max: Some(coarse.x_max),
        };
        let grid = SolverGrid::new(model, &spec).map_err(|e| SolverError::Configuration {
            constraint: "grid".into(),
            detail: e.to_string(),
        })?;
        let sol = solve_nash(model, &grid, &quads, opts)?;
        let mut sampled = [Vec::new(), Vec::new()];
        for node in coarse.nodes() {
            let fine = NodeIndex::new(node.regime, node.ix * f, node.iy * f);
            for p in Player::BOTH {
                sampled[p.index()].push(sol.value_at(&grid, p, 0, fine));
            }
        }
        fields.push(sampled);
    }
    Ok(fields
        .windows(2)
        .map(|w| {
            let mut g = [0.0; 2];
            for (p, gap) in g.iter_mut().enumerate() {
                *gap = w[0][p]
                    .iter()
                    .zip(&w[1][p])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            }
            g
        })
        .collect())
}

fn solve_failure(e: &SolverError) -> String {
    format!("solve failed: {e}")
}

/// Runs the property suite. `quick` keeps it under a minute on the default
/// grid by skipping the Monte Carlo game checks and grid refinement.
pub fn run_verify(cfg: &RunConfig, quick: bool) -> VerifyReport {
    let mut report = VerifyReport::default();
    let model = cfg.effective_model();
    let mc = &cfg.monte_carlo;

    let t = Instant::now();
    let grid = SolverGrid::new(&model, &cfg.grid);
    let coeffs = match &grid {
        Ok(g) => regime_quadratures(&model, cfg.quadrature.xi)
            .and_then(|q| assemble_coefficients(&model, g, &q, cfg.solver.stencil)),
        Err(e) => Err(SolverError::Configuration {
            constraint: "grid".into(),
            detail: e.to_string(),
        }),
    };
    report.push(
        "monotone coefficients",
        t,
        match &coeffs {
            Ok(c) => Ok(format!("eps {:.4e}, delta {:.6}", c.eps, c.delta)),
            Err(e) => Err(e.to_string()),
        },
    );

    let t = Instant::now();
    report.push(
        "quadrature refinement",
        t,
        match quadrature_order(&model.dynamics.jumps, cfg.quadrature.xi) {
            Ok(o) if o > 3.5 => Ok(format!("observed order {o:.2}")),
            Ok(o) => Err(format!("observed order {o:.2} below 3.5")),
            Err(e) => Err(e.to_string()),
        },
    );

    let t = Instant::now();
    let d = &model.dynamics;
    let n_ou = if quick { 20_000 } else { 100_000 };
    let m = ou_moments(d.kappa, d.mu_log[0], d.sigma[0], d.mu_log[0] - 0.5, model.horizon, n_ou, mc.dt, mc.seed);
    let (zm, zv) = m.z_scores();
    let detail = format!("{n_ou} paths, z(mean) {zm:.2}, z(var) {zv:.2}");
    report.push("OU moments", t, if m.within(3.0) { Ok(detail) } else { Err(detail) });

    let t = Instant::now();
    let years = if quick { 20_000.0 } else { 100_000.0 };
    let rates = ctmc_rates(&d.generator, years, model.horizon, mc.seed);
    let worst = rates.iter().map(RateCheck::z_score).fold(0.0, f64::max);
    let detail = format!("{years} path-years, worst z {worst:.2}");
    report.push("regime switch rates", t, if worst <= 3.0 { Ok(detail) } else { Err(detail) });

    let t = Instant::now();
    let solved = match (&grid, &coeffs) {
        (Ok(_), Ok(_)) => Some(cfg.solve()),
        _ => None,
    };
    let sol = match solved {
        Some(Ok((_, g, s))) => {
            let r = &s.report;
            report.push(
                "Nash solve",
                t,
                Ok(format!(
                    "{} rounds, {} sweeps, {} mixed nodes",
                    r.nash_rounds, r.iterations, r.mixed_nodes
                )),
            );
            Some((g, s))
        }
        Some(Err(e)) => {
            report.push("Nash solve", t, Err(solve_failure(&e)));
            None
        }
        None => {
            report.push("Nash solve", t, Err("skipped: no valid coefficients".into()));
            None
        }
    };

    let Some((grid, sol)) = sol else {
        return report;
    };
    let r = &sol.report;
    let t = Instant::now();
    let detail = format!(
        "measured {:.6} <= delta {:.6}, {} violations",
        r.measured_delta, r.delta, r.contraction_violations
    );
    report.push("contraction", t, if contraction_holds(r) { Ok(detail) } else { Err(detail) });
    let detail = format!(
        "max|V| [{:.4e}, {:.4e}] <= bound [{:.4e}, {:.4e}]",
        r.max_abs_value[0], r.max_abs_value[1], r.a_priori_bound[0], r.a_priori_bound[1]
    );
    report.push("boundedness", t, if bounded(r) { Ok(detail) } else { Err(detail) });

    let t = Instant::now();
    let tb = tax_boundary(&model, &grid, &sol.policies);
    let detail = format!(
        "{} sign mismatches in {} nodes, {}/{} slices off by > h_x (of {}), max offset {:.4}",
        tb.sign_mismatches, tb.nodes_checked, tb.slices_off, tb.slices_checked, tb.slices_total, tb.max_offset
    );
    report.push("tax boundary", t, if tb.passed() { Ok(detail) } else { Err(detail) });

    if quick {
        return report;
    }

    let t = Instant::now();
    let states = default_states(&model, &grid);
    report.push(
        "PDE-MC agreement",
        t,
        match cross_validate(&model, &grid, &sol, &states, mc) {
            Ok(cs) => {
                let bad = cs.iter().filter(|c| !c.passed()).count();
                let worst = cs
                    .iter()
                    .map(|c| (c.pde - c.mc).abs() / c.tolerance)
                    .fold(0.0, f64::max);
                let detail = format!("{} comparisons, {bad} outside tolerance, worst ratio {worst:.2}", cs.len());
                if bad == 0 {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }
            Err(e) => Err(e.to_string()),
        },
    );

    let dev_cfg = PathConfig {
        n_paths: mc.n_paths.min(4_000),
        ..mc.clone()
    };
    for player in Player::BOTH {
        let t = Instant::now();
        let mut worst_excess = f64::NEG_INFINITY;
        let mut failures = 0;
        let mut error = None;
        for &node in states.iter().take(2) {
            let start = StartState {
                t0: 0.0,
                x0: grid.x(node.ix),
                y0: grid.y(node.iy),
                regime: node.regime,
            };
            match deviation_test(&model, &sol.policies, player, 20, start, &dev_cfg) {
                Ok(d) => {
                    let slack = 0.01 * d.equilibrium.mean.abs();
                    for a in &d.alternatives {
                        worst_excess = worst_excess.max(a.gain - a.half_width - slack);
                    }
                    if !d.holds(0.01) {
                        failures += 1;
                    }
                }
                Err(e) => error = Some(e.to_string()),
            }
        }
        let name = format!("deviation player {}", player.number());
        let result = match error {
            Some(e) => Err(e),
            None => {
                let detail = format!("20 alternatives at 2 states, worst excess gain {worst_excess:.4e}");
                if failures == 0 {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }
        };
        report.push(&name, t, result);
    }

    let t = Instant::now();
    let base = GridSpec {
        n_x: ((cfg.grid.n_x - 1) / 4).max(4) + 1,
        n_y: ((cfg.grid.n_y - 1) / 4).max(2) + 1,
        n_t: Some(((grid.n_t - 1) / 4).max(2) + 1),
        x_min: Some(grid.x_min),
        x_max: Some(grid.x_max),
    };
    report.push(
        "grid refinement",
        t,
        match grid_refinement(&model, &base, 3, cfg.quadrature.xi, &cfg.solver) {
            Ok(g) => {
                let detail = format!(
                    "gaps V1 {:.4e} -> {:.4e}, V2 {:.4e} -> {:.4e}",
                    g[0][0], g[1][0], g[0][1], g[1][1]
                );
                if g[1][0] < g[0][0] && g[1][1] < g[0][1] {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }
            Err(e) => Err(solve_failure(&e)),
        },
    );
    report
}
