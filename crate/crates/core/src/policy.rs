//! Bang-bang equilibrium policies and their decision-region geometry.
//!
//! Both running payoffs are affine in the player's own control, so each
//! best response sits at an endpoint of the control interval. The sign of
//!
//! ```text
//! F = −Δ_y V₁ + θ(1 − u₂)(e^x − m(c − b·y))     (company)
//! G = θ·P(x, y, u₁)                              (government)
//! ```
//!
//! picks the endpoint; a zero coefficient selects control 0.
//!
//! The pointwise endpoint game can lack a pure equilibrium: the company
//! extracts only when untaxed while the government taxes only when the
//! company extracts. Such nodes take the mixed equilibrium of the 2×2 game.
//! Payoffs are bilinear in `(u1, u2)`, so its expected controls are an
//! interior control pair making each player indifferent (`F = 0`, `G = 0`).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{NodeIndex, SolverGrid, ValueField};
use crate::model::{GameModel, Player};
use crate::output::sig12;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy file: {0}")]
    Csv(#[from] csv::Error),
    #[error("policy file: {0}")]
    Format(String),
}

/// Coordinates of the lattice a policy was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAxes {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub regimes: usize,
}

impl PolicyAxes {
    pub fn from_grid(grid: &SolverGrid) -> Self {
        Self {
            t: grid.ts(),
            x: grid.xs(),
            y: grid.ys(),
            regimes: grid.regimes,
        }
    }

    #[inline]
    pub fn level_len(&self) -> usize {
        self.regimes * self.x.len() * self.y.len()
    }

    #[inline]
    pub fn index(&self, it: usize, regime: usize, ix: usize, iy: usize) -> usize {
        it * self.level_len() + (regime * self.y.len() + iy) * self.x.len() + ix
    }
}

/// Result of a nearest-node lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub u1: f64,
    pub u2: f64,
    /// The query fell outside the lattice in x or y and was clamped.
    pub clamped: bool,
}

/// Per-node controls of both players over every time level.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub axes: PolicyAxes,
    pub u1_max: f64,
    pub u2_max: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// Nodes resolved by the mixed equilibrium.
    pub mixed: Vec<bool>,
}

impl PolicyField {
    pub fn zeros(grid: &SolverGrid, model: &GameModel) -> Self {
        let axes = PolicyAxes::from_grid(grid);
        let n = axes.level_len() * axes.t.len();
        Self {
            axes,
            u1_max: model.u1_max,
            u2_max: model.u2_max,
            u1: vec![0.0; n],
            u2: vec![0.0; n],
            mixed: vec![false; n],
        }
    }

    pub fn mixed_count(&self) -> usize {
        self.mixed.iter().filter(|m| **m).count()
    }

    pub fn controls(&self, player: Player) -> &[f64] {
        match player {
            Player::Company => &self.u1,
            Player::Government => &self.u2,
        }
    }

    pub fn controls_mut(&mut self, player: Player) -> &mut [f64] {
        match player {
            Player::Company => &mut self.u1,
            Player::Government => &mut self.u2,
        }
    }

    pub fn bound(&self, player: Player) -> f64 {
        match player {
            Player::Company => self.u1_max,
            Player::Government => self.u2_max,
        }
    }

    /// Controls of one player at one time level, laid out like a grid level.
    pub fn level(&self, player: Player, it: usize) -> &[f64] {
        let n = self.axes.level_len();
        &self.controls(player)[it * n..(it + 1) * n]
    }

    pub fn level_mut(&mut self, player: Player, it: usize) -> &mut [f64] {
        let n = self.axes.level_len();
        &mut self.controls_mut(player)[it * n..(it + 1) * n]
    }

    pub fn get(&self, player: Player, it: usize, node: NodeIndex) -> f64 {
        self.controls(player)[self.axes.index(it, node.regime, node.ix, node.iy)]
    }

    /// Every control off the mixed set equals 0 or its upper bound, and
    /// extraction is off at `y = 0`.
    pub fn is_bang_bang(&self) -> bool {
        let endpoints = |u: &[f64], hi: f64| {
            u.iter()
                .zip(&self.mixed)
                .all(|(v, m)| *m || *v == 0.0 || *v == hi)
        };
        if !endpoints(&self.u1, self.u1_max) || !endpoints(&self.u2, self.u2_max) {
            return false;
        }
        let a = &self.axes;
        (0..a.t.len()).all(|it| {
            (0..a.regimes)
                .all(|i| (0..a.x.len()).all(|ix| self.u1[a.index(it, i, ix, 0)] == 0.0))
        })
    }

    /// Nodes (time index, node) where the two fields disagree.
    pub fn differing_nodes(&self, other: &PolicyField) -> Vec<(Player, usize, NodeIndex)> {
        let a = &self.axes;
        let n = a.level_len();
        let mut out = Vec::new();
        for player in Player::BOTH {
            let (p, q) = (self.controls(player), other.controls(player));
            for (k, (u, v)) in p.iter().zip(q).enumerate() {
                if u != v {
                    let it = k / n;
                    let rest = k % n;
                    let ix = rest % a.x.len();
                    let rest = rest / a.x.len();
                    out.push((
                        player,
                        it,
                        NodeIndex::new(rest / a.y.len(), ix, rest % a.y.len()),
                    ));
                }
            }
        }
        out
    }

    /// Nearest-node controls at `(t, x, y, regime)`; bang-bang values are never interpolated.
    pub fn lookup(&self, t: f64, x: f64, y: f64, regime: usize) -> Lookup {
        let a = &self.axes;
        let (it, _) = nearest_sorted(&a.t, t);
        let (ix, cx) = nearest_sorted(&a.x, x);
        let (iy, cy) = nearest_sorted(&a.y, y);
        let k = a.index(it, regime, ix, iy);
        Lookup {
            u1: self.u1[k],
            u2: self.u2[k],
            clamped: cx || cy,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["regime", "t", "x", "y", "u1", "u2"])?;
        let a = &self.axes;
        let stride = stride.max(1);
        for it in 0..a.t.len() {
            if it % stride != 0 && it + 1 != a.t.len() {
                continue;
            }
            let t = sig12(a.t[it]);
            for regime in 0..a.regimes {
                for iy in 0..a.y.len() {
                    for ix in 0..a.x.len() {
                        let k = a.index(it, regime, ix, iy);
                        w.write_record([
                            &(regime + 1).to_string(),
                            t.as_str(),
                            &sig12(a.x[ix]),
                            &sig12(a.y[iy]),
                            &sig12(self.u1[k]),
                            &sig12(self.u2[k]),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a policy CSV. Axes are rebuilt from the distinct coordinates;
    /// every `(regime, t, x, y)` combination must be present exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, PolicyError> {
        #[derive(Deserialize)]
        struct Row {
            regime: usize,
            t: f64,
            x: f64,
            y: f64,
            u1: f64,
            u2: f64,
        }
        let mut rdr = csv::Reader::from_reader(input);
        let rows: Vec<Row> = rdr.deserialize().collect::<Result<_, _>>()?;
        if rows.is_empty() {
            return Err(PolicyError::Format("no rows".into()));
        }
        let axis = |f: &dyn Fn(&Row) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let t = axis(&|r| r.t);
        let x = axis(&|r| r.x);
        let y = axis(&|r| r.y);
        let regimes = rows.iter().map(|r| r.regime).max().unwrap_or(0);
        if regimes == 0 || rows.iter().any(|r| r.regime == 0) {
            return Err(PolicyError::Format("regimes are numbered from 1".into()));
        }
        let axes = PolicyAxes { t, x, y, regimes };
        let n = axes.level_len() * axes.t.len();
        if rows.len() != n {
            return Err(PolicyError::Format(format!(
                "{} rows do not form a full lattice of {n} nodes",
                rows.len()
            )));
        }
        let pos = |v: &[f64], q: f64| v.binary_search_by(|p| p.total_cmp(&q)).unwrap_or(0);
        let mut u1 = vec![f64::NAN; n];
        let mut u2 = vec![f64::NAN; n];
        for r in &rows {
            let k = axes.index(pos(&axes.t, r.t), r.regime - 1, pos(&axes.x, r.x), pos(&axes.y, r.y));
            u1[k] = r.u1;
            u2[k] = r.u2;
        }
        if u1.iter().any(|v| v.is_nan()) {
            return Err(PolicyError::Format("duplicate lattice nodes".into()));
        }
        let u1_max = u1.iter().copied().fold(0.0, f64::max);
        let u2_max = u2.iter().copied().fold(0.0, f64::max);
        let interior = |v: f64, hi: f64| v != 0.0 && v != hi;
        let mixed = u1
            .iter()
            .zip(&u2)
            .map(|(a, b)| interior(*a, u1_max) || interior(*b, u2_max))
            .collect();
        Ok(Self {
            axes,
            u1_max,
            u2_max,
            u1,
            u2,
            mixed,
        })
    }
}

/// Index of the nearest entry of an ascending slice and whether `v` was outside it.
fn nearest_sorted(v: &[f64], q: f64) -> (usize, bool) {
    let last = v.len() - 1;
    if q <= v[0] {
        return (0, q < v[0]);
    }
    if q >= v[last] {
        return (last, q > v[last]);
    }
    let hi = v.partition_point(|p| *p < q);
    let lo = hi - 1;
    if q - v[lo] <= v[hi] - q {
        (lo, false)
    } else {
        (hi, false)
    }
}

/// Company's switching functional at one node of a time level.
pub fn functional_f(
    model: &GameModel,
    grid: &SolverGrid,
    v1: &[f64],
    node: NodeIndex,
    u2: f64,
) -> f64 {
    let x = grid.x(node.ix);
    let y = grid.y(node.iy);
    f_from_slope(model, x, y, grid.diff_y_upwind(v1, node), u2)
}

#[inline]
fn f_from_slope(model: &GameModel, x: f64, y: f64, dy_v1: f64, u2: f64) -> f64 {
    -dy_v1 + model.theta * (1.0 - u2) * (x.exp() - model.cost.unit_cost(y))
}

/// Government's switching functional `θ·P(x, y, u1)`; it never reads `V₂`.
pub fn functional_g(model: &GameModel, grid: &SolverGrid, node: NodeIndex, u1: f64) -> f64 {
    model.theta * model.profit_rate_unchecked(grid.x(node.ix), grid.y(node.iy), u1)
}

/// Equilibrium of the endpoint game at one node with `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEquilibrium {
    pub u1: f64,
    pub u2: f64,
    pub mixed: bool,
}

/// Equilibrium of the node game given `Δ_y V₁` (`dy_v1`).
///
/// Pure endpoint pairs are tried in the order `(0,0), (0,ū₂), (ū₁,0), (ū₁,ū₂)`;
/// with a positive fixed cost at most one of them is an equilibrium. Without
/// one, the mixed equilibrium is returned. The company's resulting
/// Hamiltonian is continuous and nonincreasing in `Δ_y V₁`.
pub fn node_equilibrium(model: &GameModel, x: f64, y: f64, dy_v1: f64) -> NodeEquilibrium {
    let (hi1, hi2) = (model.u1_max, model.u2_max);
    let br1 = |u2: f64| if f_from_slope(model, x, y, dy_v1, u2) > 0.0 { hi1 } else { 0.0 };
    let br2 = |u1: f64| {
        if model.theta * model.profit_rate_unchecked(x, y, u1) > 0.0 {
            hi2
        } else {
            0.0
        }
    };
    if let Some(&(u1, u2)) = [(0.0, 0.0), (0.0, hi2), (hi1, 0.0), (hi1, hi2)]
        .iter()
        .find(|&&(a, b)| br1(b) == a && br2(a) == b)
    {
        return NodeEquilibrium {
            u1,
            u2,
            mixed: false,
        };
    }
    // P is affine in u1 and F affine in u2; both slopes are nonzero here
    let margin = x.exp() - model.cost.unit_cost(y);
    let p0 = model.profit_rate_unchecked(x, y, 0.0);
    let u1 = (-p0 / margin).clamp(0.0, hi1);
    let u2 = (1.0 - dy_v1 / (model.theta * margin)).clamp(0.0, hi2);
    NodeEquilibrium { u1, u2, mixed: true }
}

/// Applies the F/G sign rules at every node of one time level: the company
/// responds to `u2_in`, then the government responds to the new `u1`.
/// Nodes whose endpoint game has no pure equilibrium take the mixed one.
pub fn extract_level(
    model: &GameModel,
    grid: &SolverGrid,
    v1: &[f64],
    u2_in: &[f64],
    u1_out: &mut [f64],
    u2_out: &mut [f64],
    mixed_out: &mut [bool],
) {
    for k in 0..grid.level_len() {
        let node = grid.node(k);
        if node.iy > 0 {
            let eq = node_equilibrium(
                model,
                grid.x(node.ix),
                grid.y(node.iy),
                grid.diff_y_upwind(v1, node),
            );
            if eq.mixed {
                u1_out[k] = eq.u1;
                u2_out[k] = eq.u2;
                mixed_out[k] = true;
                continue;
            }
        }
        mixed_out[k] = false;
        let u1 = if node.iy == 0 || functional_f(model, grid, v1, node, u2_in[k]) <= 0.0 {
            0.0
        } else {
            model.u1_max
        };
        u1_out[k] = u1;
        u2_out[k] = if functional_g(model, grid, node, u1) > 0.0 {
            model.u2_max
        } else {
            0.0
        };
    }
}

/// Bang-bang policies implied by converged value fields, one level per time index.
pub fn extract(
    model: &GameModel,
    grid: &SolverGrid,
    values: &[ValueField],
    in_progress: &PolicyField,
) -> PolicyField {
    let mut out = in_progress.clone();
    for field in values {
        let it = field.time_index;
        let u2_in = in_progress.level(Player::Government, it).to_vec();
        let n = grid.level_len();
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mixed = vec![false; n];
        extract_level(model, grid, field.player(Player::Company), &u2_in, &mut u1, &mut u2, &mut mixed);
        out.level_mut(Player::Company, it).copy_from_slice(&u1);
        out.level_mut(Player::Government, it).copy_from_slice(&u2);
        out.mixed[it * n..(it + 1) * n].copy_from_slice(&mixed);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Control is active for every `x` at or above the threshold.
    Threshold(f64),
    None,
    Mixed,
}

impl BoundaryKind {
    pub fn label(&self) -> &'static str {
        match self {
            BoundaryKind::Threshold(_) => "threshold",
            BoundaryKind::None => "none",
            BoundaryKind::Mixed => "mixed",
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            BoundaryKind::Threshold(x) => Some(*x),
            _ => None,
        }
    }
}

/// Switching location in `x` for one `(player, regime, t, y)` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBoundary {
    pub player: Player,
    pub regime: usize,
    pub time_index: usize,
    pub t: f64,
    pub y: f64,
    pub kind: BoundaryKind,
}

/// Scans every slice for the smallest active `x`. The reported threshold is
/// the midpoint between the straddling nodes (the 0/1 indicator crossing 1/2).
pub fn region_boundaries(p: &PolicyField) -> Vec<RegionBoundary> {
    let a = &p.axes;
    let mut out = Vec::with_capacity(2 * a.regimes * a.t.len() * a.y.len());
    for player in Player::BOTH {
        let u = p.controls(player);
        for regime in 0..a.regimes {
            for it in 0..a.t.len() {
                for iy in 0..a.y.len() {
                    let active = |ix: usize| u[a.index(it, regime, ix, iy)] > 0.0;
                    let first = (0..a.x.len()).find(|&ix| active(ix));
                    let kind = match first {
                        None => BoundaryKind::None,
                        Some(j) if (j..a.x.len()).all(active) => {
                            if j == 0 {
                                BoundaryKind::Threshold(a.x[0])
                            } else {
                                BoundaryKind::Threshold(0.5 * (a.x[j - 1] + a.x[j]))
                            }
                        }
                        Some(_) => BoundaryKind::Mixed,
                    };
                    out.push(RegionBoundary {
                        player,
                        regime,
                        time_index: it,
                        t: a.t[it],
                        y: a.y[iy],
                        kind,
                    });
                }
            }
        }
    }
    out
}

pub fn write_regions_csv<W: Write>(out: W, regions: &[RegionBoundary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["player", "regime", "t", "y", "x_boundary", "kind"])?;
    for r in regions {
        w.write_record([
            r.player.number().to_string(),
            (r.regime + 1).to_string(),
            sig12(r.t),
            sig12(r.y),
            r.kind.threshold().map(sig12).unwrap_or_default(),
            r.kind.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
