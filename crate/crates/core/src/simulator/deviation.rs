use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{GameModel, Player};
use crate::policy::PolicyField;

use super::game::{sample_payoffs, StartState};
use super::{PathConfig, PayoffEstimate, SimError};

/// Gain of one alternative policy over the equilibrium, from paired paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alternative {
    pub label: String,
    pub gain: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub player: u8,
    pub equilibrium: PayoffEstimate,
    pub alternatives: Vec<Alternative>,
}

impl DeviationReport {
    /// Alternative with the largest gain.
    pub fn worst(&self) -> Option<&Alternative> {
        self.alternatives
            .iter()
            .max_by(|a, b| a.gain.total_cmp(&b.gain))
    }

    /// No alternative gains more than its confidence half-width plus
    /// `rel_tol·|V|`.
    pub fn holds(&self, rel_tol: f64) -> bool {
        let slack = rel_tol * self.equilibrium.mean.abs();
        self.alternatives
            .iter()
            .all(|a| a.gain <= a.half_width + slack)
    }
}

/// Moves every x-slice of one player's policy by `cells` grid cells.
pub fn shift_in_x(p: &PolicyField, player: Player, cells: i64) -> PolicyField {
    let mut out = p.clone();
    let a = &p.axes;
    let n_x = a.x.len() as i64;
    let src = p.controls(player);
    let dst = out.controls_mut(player);
    for it in 0..a.t.len() {
        for i in 0..a.regimes {
            for iy in 0..a.y.len() {
                for ix in 0..a.x.len() {
                    let from = (ix as i64 - cells).clamp(0, n_x - 1) as usize;
                    dst[a.index(it, i, ix, iy)] = src[a.index(it, i, from, iy)];
                }
            }
        }
    }
    enforce_empty_reserve(&mut out);
    out
}

/// Flips a random fraction of one player's nodes between 0 and the bound.
pub fn flip_random(p: &PolicyField, player: Player, fraction: f64, seed: u64) -> PolicyField {
    let mut out = p.clone();
    let hi = p.bound(player);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for u in out.controls_mut(player).iter_mut() {
        if rng.random::<f64>() < fraction {
            *u = if *u > 0.0 { 0.0 } else { hi };
        }
    }
    enforce_empty_reserve(&mut out);
    out
}

/// Flips whole time levels of one player's policy.
fn flip_levels(p: &PolicyField, player: Player, levels: &[usize]) -> PolicyField {
    let mut out = p.clone();
    let hi = p.bound(player);
    for &it in levels {
        for u in out.level_mut(player, it) {
            *u = if *u > 0.0 { 0.0 } else { hi };
        }
    }
    enforce_empty_reserve(&mut out);
    out
}

pub fn constant(p: &PolicyField, player: Player, value: f64) -> PolicyField {
    let mut out = p.clone();
    out.controls_mut(player).iter_mut().for_each(|u| *u = value);
    enforce_empty_reserve(&mut out);
    out
}

fn enforce_empty_reserve(p: &mut PolicyField) {
    let a = p.axes.clone();
    for it in 0..a.t.len() {
        for i in 0..a.regimes {
            for ix in 0..a.x.len() {
                p.u1[a.index(it, i, ix, 0)] = 0.0;
            }
        }
    }
}

/// Alternative bang-bang policies for `player`, opponent untouched: all-zero,
/// all-max, boundary shifts in x, flipped time levels and random flips.
pub fn alternatives(
    p: &PolicyField,
    player: Player,
    count: usize,
    seed: u64,
) -> Vec<(String, PolicyField)> {
    let mut out = vec![
        ("all zero".to_string(), constant(p, player, 0.0)),
        ("all max".to_string(), constant(p, player, p.bound(player))),
    ];
    for cells in [1, -1, 2, -2, 4, -4, 8, -8] {
        out.push((format!("shift {cells} cells"), shift_in_x(p, player, cells)));
    }
    let n_t = p.axes.t.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut k = 0;
    while out.len() < count {
        if k % 2 == 0 {
            let mut levels: Vec<usize> = (0..n_t).collect();
            levels.shuffle(&mut rng);
            levels.truncate((n_t / 4).max(1));
            out.push((format!("flip {} levels #{k}", levels.len()), flip_levels(p, player, &levels)));
        } else {
            let fraction = [0.02, 0.1, 0.3][(k / 2) % 3];
            out.push((
                format!("flip {fraction} of nodes #{k}"),
                flip_random(p, player, fraction, rng.random()),
            ));
        }
        k += 1;
    }
    out.truncate(count.max(2));
    out
}

/// Payoff change for `player` when `alternative` replaces `base`, estimated
/// from per-path differences on common random numbers.
pub fn paired_gain(
    model: &GameModel,
    base: &PolicyField,
    alternative: &PolicyField,
    player: Player,
    start: StartState,
    cfg: &PathConfig,
) -> Result<PayoffEstimate, SimError> {
    super::game::check_start(model, &start, cfg)?;
    let (eq, _, _) = sample_payoffs(model, base, start, cfg);
    let (dev, _, _) = sample_payoffs(model, alternative, start, cfg);
    Ok(gain_of(&eq, &dev, player, cfg.n_paths))
}

fn gain_of(eq: &[[f64; 2]], dev: &[[f64; 2]], player: Player, n_paths: usize) -> PayoffEstimate {
    let p = player.index();
    let diffs: Vec<f64> = dev.iter().zip(eq).map(|(d, e)| d[p] - e[p]).collect();
    PayoffEstimate::from_samples(&diffs, n_paths)
}

/// Paired Monte Carlo test of unilateral deviations from `policies`.
///
/// Every alternative reuses the equilibrium run's random streams, so gains
/// are estimated from per-path differences.
pub fn deviation_test(
    model: &GameModel,
    policies: &PolicyField,
    player: Player,
    n_alternatives: usize,
    start: StartState,
    cfg: &PathConfig,
) -> Result<DeviationReport, SimError> {
    let base = super::game::run_game(model, policies, start, cfg)?;
    let (eq, _, _) = sample_payoffs(model, policies, start, cfg);
    let mut alts = Vec::new();
    for (label, alt) in alternatives(policies, player, n_alternatives, cfg.seed) {
        let (dev, _, _) = sample_payoffs(model, &alt, start, cfg);
        let est = gain_of(&eq, &dev, player, cfg.n_paths);
        alts.push(Alternative {
            label,
            gain: est.mean,
            half_width: est.half_width,
        });
    }
    Ok(DeviationReport {
        player: player.number(),
        equilibrium: base.player(player).clone(),
        alternatives: alts,
    })
}
