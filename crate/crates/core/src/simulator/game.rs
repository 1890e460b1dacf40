use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{split_profit, GameModel, Player};
use crate::output::sig12;
use crate::policy::PolicyField;

use super::price::{knots, PriceStepper};
use super::regime::simulate_regime_with;
use super::{PathConfig, PayoffEstimate, SimError};

/// Starting state of a simulated game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartState {
    pub t0: f64,
    pub x0: f64,
    pub y0: f64,
    pub regime: usize,
}

/// One row of the optional path dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub path: usize,
    pub t: f64,
    pub regime: usize,
    pub x: f64,
    pub y: f64,
    pub u1: f64,
    pub u2: f64,
    pub running_l1: f64,
    pub running_l2: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PathOutcome {
    pub payoff: [f64; 2],
    pub steps: usize,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameEstimate {
    pub company: PayoffEstimate,
    pub government: PayoffEstimate,
    pub steps: usize,
    pub clamped_steps: usize,
}

impl GameEstimate {
    pub fn player(&self, p: Player) -> &PayoffEstimate {
        match p {
            Player::Company => &self.company,
            Player::Government => &self.government,
        }
    }

    pub fn clamp_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.clamped_steps as f64 / self.steps as f64
        }
    }
}

#[allow(clippy::too_many_arguments)]
/// Simulates one path. `stream` selects the RNG stream; `sign` mirrors the
/// noise for the antithetic partner.
pub(crate) fn play_path(
    model: &GameModel,
    stepper: &PriceStepper,
    policies: &PolicyField,
    start: StartState,
    cfg: &PathConfig,
    stream: u64,
    sign: f64,
    mut dump: Option<&mut Vec<PathRow>>,
    path_id: usize,
) -> PathOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let end = model.horizon;
    let regimes = simulate_regime_with(&model.dynamics.generator, start.regime, start.t0, end, &mut rng);
    let times = knots(start.t0, end, cfg.dt, &regimes.times);
    let r = model.discount_rate;
    let theta = model.theta;
    let payoff = |x: f64, y: f64, u1: f64, u2: f64| {
        let p = model.profit_rate_unchecked(x, y, u1);
        [
            split_profit(Player::Company, theta, p, u2),
            split_profit(Player::Government, theta, p, u2),
        ]
    };

    let mut out = PathOutcome::default();
    let mut x = start.x0;
    let mut y = start.y0;
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let i = regimes.regime_at(t);
        let look = policies.lookup(t, x, y, i);
        out.steps += 1;
        if look.clamped {
            out.clamped += 1;
        }
        let u2 = look.u2;
        let u1 = if y <= 0.0 { 0.0 } else { look.u1.min(y / h) };
        let l0 = payoff(x, y, u1, u2);
        if let Some(rows) = dump.as_deref_mut() {
            rows.push(PathRow {
                path: path_id,
                t,
                regime: i,
                x,
                y,
                u1,
                u2,
                running_l1: l0[0],
                running_l2: l0[1],
            });
        }
        let nx = stepper.step(i, x, h, sign, &mut rng);
        let ny = (y - u1 * h).max(0.0);
        let l1 = payoff(nx, ny, u1, u2);
        let d0 = (-r * (t - start.t0)).exp();
        let d1 = (-r * (t + h - start.t0)).exp();
        for p in 0..2 {
            out.payoff[p] += 0.5 * h * (d0 * l0[p] + d1 * l1[p]);
        }
        x = nx;
        y = ny;
    }
    let d = (-r * (end - start.t0)).exp();
    for p in Player::BOTH {
        out.payoff[p.index()] += d * model.terminal_payoff_unchecked(p, x, y);
    }
    if let Some(rows) = dump {
        let i = regimes.regime_at(end);
        rows.push(PathRow {
            path: path_id,
            t: end,
            regime: i,
            x,
            y,
            u1: 0.0,
            u2: 0.0,
            running_l1: 0.0,
            running_l2: 0.0,
        });
    }
    out
}

/// Per-sample payoffs: one entry per path, or per antithetic pair.
pub(crate) fn sample_payoffs(
    model: &GameModel,
    policies: &PolicyField,
    start: StartState,
    cfg: &PathConfig,
) -> (Vec<[f64; 2]>, usize, usize) {
    let stepper = PriceStepper::new(&model.dynamics);
    let samples: Vec<PathOutcome> = if cfg.antithetic {
        let pairs = cfg.n_paths.div_ceil(2);
        (0..pairs)
            .into_par_iter()
            .map(|j| {
                let a = play_path(model, &stepper, policies, start, cfg, j as u64, 1.0, None, 2 * j);
                let b = play_path(model, &stepper, policies, start, cfg, j as u64, -1.0, None, 2 * j + 1);
                PathOutcome {
                    payoff: [
                        0.5 * (a.payoff[0] + b.payoff[0]),
                        0.5 * (a.payoff[1] + b.payoff[1]),
                    ],
                    steps: a.steps + b.steps,
                    clamped: a.clamped + b.clamped,
                }
            })
            .collect()
    } else {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|j| play_path(model, &stepper, policies, start, cfg, j as u64, 1.0, None, j))
            .collect()
    };
    let steps = samples.iter().map(|s| s.steps).sum();
    let clamped = samples.iter().map(|s| s.clamped).sum();
    (samples.into_iter().map(|s| s.payoff).collect(), steps, clamped)
}

pub(crate) fn check_start(model: &GameModel, start: &StartState, cfg: &PathConfig) -> Result<(), SimError> {
    let v = cfg.validate(None);
    if !v.is_empty() {
        return Err(SimError::Config(v));
    }
    if !(0.0..=model.reserve).contains(&start.y0) {
        return Err(SimError::Domain(format!(
            "y0 = {} outside [0, {}]",
            start.y0, model.reserve
        )));
    }
    if start.regime >= model.n_regimes() {
        return Err(SimError::Domain(format!("regime {} out of range", start.regime + 1)));
    }
    if !(start.t0 >= 0.0 && start.t0 < model.horizon) || !start.x0.is_finite() {
        return Err(SimError::Domain("start time or price out of range".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of both players' payoffs under feedback `policies`.
pub fn run_game(
    model: &GameModel,
    policies: &PolicyField,
    start: StartState,
    cfg: &PathConfig,
) -> Result<GameEstimate, SimError> {
    check_start(model, &start, cfg)?;
    if policies.axes.regimes != model.n_regimes() {
        return Err(SimError::Domain(format!(
            "policies have {} regimes, model has {}",
            policies.axes.regimes,
            model.n_regimes()
        )));
    }
    let (samples, steps, clamped) = sample_payoffs(model, policies, start, cfg);
    let col = |p: usize| samples.iter().map(|s| s[p]).collect::<Vec<_>>();
    Ok(GameEstimate {
        company: PayoffEstimate::from_samples(&col(0), cfg.n_paths),
        government: PayoffEstimate::from_samples(&col(1), cfg.n_paths),
        steps,
        clamped_steps: clamped,
    })
}

/// Rows for the first `n` paths of a run (no antithetic mirroring).
pub fn dump_paths(
    model: &GameModel,
    policies: &PolicyField,
    start: StartState,
    cfg: &PathConfig,
    n: usize,
) -> Result<Vec<PathRow>, SimError> {
    check_start(model, &start, cfg)?;
    let stepper = PriceStepper::new(&model.dynamics);
    let mut rows = Vec::new();
    for j in 0..n.min(cfg.n_paths) {
        play_path(model, &stepper, policies, start, cfg, j as u64, 1.0, Some(&mut rows), j);
    }
    Ok(rows)
}

pub fn write_paths_csv<W: Write>(out: W, rows: &[PathRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "path", "t", "regime", "x", "y", "u1", "u2", "running_L1", "running_L2",
    ])?;
    for r in rows {
        w.write_record([
            r.path.to_string(),
            sig12(r.t),
            (r.regime + 1).to_string(),
            sig12(r.x),
            sig12(r.y),
            sig12(r.u1),
            sig12(r.u2),
            sig12(r.running_l1),
            sig12(r.running_l2),
        ])?;
    }
    w.flush()?;
    Ok(())
}
