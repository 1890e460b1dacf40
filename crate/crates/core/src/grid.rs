//! Space-time-regime lattice, finite-difference operators and value storage.
//!
//! A time level stores one value per `(regime, y, x)` node with `x` fastest.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GameModel, Player};
use crate::output::sig12;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid: {0}")]
    Invalid(String),
}

/// User-facing grid settings; omitted bounds and time levels are derived from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_n_x")]
    pub n_x: usize,
    #[serde(default = "default_n_y")]
    pub n_y: usize,
    #[serde(default)]
    pub n_t: Option<usize>,
    #[serde(default)]
    pub x_min: Option<f64>,
    #[serde(default)]
    pub x_max: Option<f64>,
}

fn default_n_x() -> usize {
    121
}

fn default_n_y() -> usize {
    61
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_x: default_n_x(),
            n_y: default_n_y(),
            n_t: None,
            x_min: None,
            x_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeIndex {
    pub regime: usize,
    pub ix: usize,
    pub iy: usize,
}

impl NodeIndex {
    pub fn new(regime: usize, ix: usize, iy: usize) -> Self {
        Self { regime, ix, iy }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub h_x: f64,
    pub y_max: f64,
    pub n_y: usize,
    pub h_y: f64,
    pub horizon: f64,
    pub k: f64,
    pub n_t: usize,
    pub regimes: usize,
}

/// Log-price window covering ±4 stationary standard deviations of every regime.
pub fn default_x_bounds(model: &GameModel) -> (f64, f64) {
    let dynamics = &model.dynamics;
    let sigma = dynamics.max_sigma();
    let spread = if dynamics.kappa > 0.0 {
        4.0 * sigma / (2.0 * dynamics.kappa).sqrt()
    } else {
        4.0 * sigma * model.horizon.sqrt()
    };
    let spread = spread.max(1.0);
    let lo_mu = dynamics.mu_log.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_mu = dynamics.mu_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = lo_mu - spread;
    let mut hi = hi_mu + spread;
    // keep the extraction break-even price inside the window
    let unit = model.cost.unit_cost(0.0);
    if unit > 0.0 {
        let be = unit.ln();
        lo = lo.min(be - 1.0);
        hi = hi.max(be + 1.0);
    }
    (lo, hi)
}

/// Largest per-node exit rate of the spatial operator (diffusion, drift,
/// reserve transport, jumps and regime switches).
pub fn spatial_rate(model: &GameModel, x_min: f64, x_max: f64, h_x: f64, h_y: f64) -> f64 {
    let d = &model.dynamics;
    (0..d.n_regimes())
        .map(|i| {
            let comp = d.gamma[i] * d.jumps.intensity[i] * d.jumps.small_jump_mean();
            let drift = [x_min, x_max]
                .iter()
                .map(|x| (d.kappa * (d.mu_log[i] - x) - comp).abs())
                .fold(0.0, f64::max);
            d.sigma[i].powi(2) / (h_x * h_x)
                + drift / h_x
                + model.u1_max / h_y
                + d.jumps.intensity[i]
                + d.generator.exit_rate(i)
        })
        .fold(0.0, f64::max)
}

impl SolverGrid {
    pub fn new(model: &GameModel, spec: &GridSpec) -> Result<Self, GridError> {
        if spec.n_x < 3 {
            return Err(GridError::Invalid("n_x must be >= 3".into()));
        }
        if spec.n_y < 2 {
            return Err(GridError::Invalid("n_y must be >= 2".into()));
        }
        let (lo, hi) = default_x_bounds(model);
        let x_min = spec.x_min.unwrap_or(lo);
        let x_max = spec.x_max.unwrap_or(hi);
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(GridError::Invalid(format!(
                "x bounds [{x_min}, {x_max}] are not an interval"
            )));
        }
        let h_x = (x_max - x_min) / (spec.n_x - 1) as f64;
        if h_x >= 1.0 {
            return Err(GridError::Invalid(format!(
                "h_x = {h_x} must lie in (0,1); increase n_x"
            )));
        }
        let h_y = model.reserve / (spec.n_y - 1) as f64;
        let n_t = match spec.n_t {
            Some(n) => n,
            None => {
                // backward-Euler step no longer than the explicit positivity limit
                let rate = spatial_rate(model, x_min, x_max, h_x, h_y);
                let steps = if rate > 0.0 {
                    (model.horizon * rate).ceil() as usize
                } else {
                    1
                };
                steps.max(10) + 1
            }
        };
        if n_t < 2 {
            return Err(GridError::Invalid("n_t must be >= 2".into()));
        }
        let k = model.horizon / (n_t - 1) as f64;
        Ok(Self {
            x_min,
            x_max,
            n_x: spec.n_x,
            h_x,
            y_max: model.reserve,
            n_y: spec.n_y,
            h_y,
            horizon: model.horizon,
            k,
            n_t,
            regimes: model.n_regimes(),
        })
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        if ix + 1 == self.n_x {
            self.x_max
        } else {
            self.x_min + ix as f64 * self.h_x
        }
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        if iy + 1 == self.n_y {
            self.y_max
        } else {
            iy as f64 * self.h_y
        }
    }

    #[inline]
    pub fn t(&self, it: usize) -> f64 {
        if it + 1 == self.n_t {
            self.horizon
        } else {
            it as f64 * self.k
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.n_y).map(|i| self.y(i)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.n_t).map(|i| self.t(i)).collect()
    }

    /// Number of nodes in one time level for one player.
    #[inline]
    pub fn level_len(&self) -> usize {
        self.regimes * self.n_x * self.n_y
    }

    #[inline]
    pub fn index(&self, node: NodeIndex) -> usize {
        (node.regime * self.n_y + node.iy) * self.n_x + node.ix
    }

    pub fn node(&self, index: usize) -> NodeIndex {
        let ix = index % self.n_x;
        let rest = index / self.n_x;
        NodeIndex {
            regime: rest / self.n_y,
            ix,
            iy: rest % self.n_y,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeIndex> + '_ {
        (0..self.level_len()).map(|i| self.node(i))
    }

    pub fn nearest_ix(&self, x: f64) -> usize {
        nearest(x, self.x_min, self.h_x, self.n_x)
    }

    pub fn nearest_iy(&self, y: f64) -> usize {
        nearest(y, 0.0, self.h_y, self.n_y)
    }

    /// Upwind first difference in x: forward for `drift >= 0`, backward
    /// otherwise, one-sided inward at the boundary.
    pub fn diff_x_upwind(&self, f: &[f64], node: NodeIndex, drift: f64) -> f64 {
        let i = self.index(node);
        let forward = if node.ix == 0 {
            true
        } else if node.ix + 1 == self.n_x {
            false
        } else {
            drift >= 0.0
        };
        if forward {
            (f[i + 1] - f[i]) / self.h_x
        } else {
            (f[i] - f[i - 1]) / self.h_x
        }
    }

    /// Central second difference; boundary nodes copy the adjacent interior one.
    pub fn diff_xx(&self, f: &[f64], node: NodeIndex) -> f64 {
        let ix = node.ix.clamp(1, self.n_x - 2);
        let i = self.index(NodeIndex { ix, ..node });
        (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (self.h_x * self.h_x)
    }

    /// Backward difference in y (reserves only decrease). At `y = 0` the
    /// extraction rate is forced to zero, so the term is never used; returns 0.
    pub fn diff_y_upwind(&self, f: &[f64], node: NodeIndex) -> f64 {
        if node.iy == 0 {
            return 0.0;
        }
        let i = self.index(node);
        (f[i] - f[i - self.n_x]) / self.h_y
    }
}

fn nearest(v: f64, lo: f64, h: f64, n: usize) -> usize {
    let s = ((v - lo) / h).round();
    if s <= 0.0 {
        0
    } else {
        (s as usize).min(n - 1)
    }
}

/// `B = ‖L‖_∞ (1 − e^{−rT}) / r + ‖Φ‖_∞` on the truncated domain, per player.
pub fn a_priori_bound(model: &GameModel, grid: &SolverGrid) -> [f64; 2] {
    let mut out = [0.0; 2];
    for player in Player::BOTH {
        let mut l_max: f64 = 0.0;
        let mut phi_max: f64 = 0.0;
        // payoffs are multilinear in (e^x, y, u1, u2): extremes sit on box corners
        for x in [grid.x_min, grid.x_max] {
            for y in [0.0, grid.y_max] {
                phi_max = phi_max.max(model.terminal_payoff_unchecked(player, x, y).abs());
                for u1 in [0.0, model.u1_max] {
                    for u2 in [0.0, model.u2_max] {
                        let p = model.profit_rate_unchecked(x, y, u1);
                        let l = crate::model::split_profit(player, model.theta, p, u2);
                        l_max = l_max.max(l.abs());
                    }
                }
            }
        }
        let r = model.discount_rate;
        out[player.index()] = l_max * (1.0 - (-r * model.horizon).exp()) / r + phi_max;
    }
    out
}

/// Both players' values at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub time_index: usize,
    level_len: usize,
    values: Vec<f64>,
}

impl ValueField {
    pub fn zeros(grid: &SolverGrid, time_index: usize) -> Self {
        Self {
            time_index,
            level_len: grid.level_len(),
            values: vec![0.0; 2 * grid.level_len()],
        }
    }

    pub fn from_players(time_index: usize, v1: &[f64], v2: &[f64]) -> Self {
        assert_eq!(v1.len(), v2.len());
        let mut values = Vec::with_capacity(2 * v1.len());
        values.extend_from_slice(v1);
        values.extend_from_slice(v2);
        Self {
            time_index,
            level_len: v1.len(),
            values,
        }
    }

    pub fn terminal(model: &GameModel, grid: &SolverGrid) -> Self {
        let mut field = Self::zeros(grid, grid.n_t - 1);
        for player in Player::BOTH {
            let slice = field.player_mut(player);
            for (i, v) in slice.iter_mut().enumerate() {
                let node = grid.node(i);
                *v = model.terminal_payoff_unchecked(player, grid.x(node.ix), grid.y(node.iy));
            }
        }
        field
    }

    pub fn player(&self, player: Player) -> &[f64] {
        let o = player.index() * self.level_len;
        &self.values[o..o + self.level_len]
    }

    pub fn player_mut(&mut self, player: Player) -> &mut [f64] {
        let o = player.index() * self.level_len;
        &mut self.values[o..o + self.level_len]
    }

    pub fn get(&self, grid: &SolverGrid, player: Player, node: NodeIndex) -> f64 {
        self.player(player)[grid.index(node)]
    }

    pub fn sup_norm(&self, player: Player) -> f64 {
        self.player(player).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Writes `t,x,y,regime,V1,V2` rows for every `stride`-th level plus the terminal one.
pub fn write_values_csv<W: Write>(
    out: W,
    grid: &SolverGrid,
    levels: &[ValueField],
    stride: usize,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "regime", "V1", "V2"])?;
    let stride = stride.max(1);
    for field in levels {
        let it = field.time_index;
        if it % stride != 0 && it + 1 != grid.n_t {
            continue;
        }
        let t = sig12(grid.t(it));
        let v1 = field.player(Player::Company);
        let v2 = field.player(Player::Government);
        for (i, (a, b)) in v1.iter().zip(v2).enumerate() {
            let node = grid.node(i);
            w.write_record([
                t.as_str(),
                &sig12(grid.x(node.ix)),
                &sig12(grid.y(node.iy)),
                &(node.regime + 1).to_string(),
                &sig12(*a),
                &sig12(*b),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SolverGrid {
        let model = GameModel::worked_example();
        SolverGrid::new(
            &model,
            &GridSpec {
                n_x: 41,
                n_y: 11,
                n_t: Some(11),
                x_min: Some(0.0),
                x_max: Some(4.0),
            },
        )
        .unwrap()
    }

    fn field(g: &SolverGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..g.level_len())
            .map(|i| {
                let n = g.node(i);
                f(g.x(n.ix), g.y(n.iy))
            })
            .collect()
    }

    #[test]
    fn steps_follow_counts() {
        let g = grid();
        assert!((g.h_x - 0.1).abs() < 1e-15);
        assert!((g.h_y - 1e6).abs() < 1e-6);
        assert!((g.k - 1.0).abs() < 1e-15);
        assert_eq!(g.x(40), 4.0);
        assert_eq!(g.t(10), 10.0);
    }

    #[test]
    fn index_round_trip() {
        let g = grid();
        for i in 0..g.level_len() {
            assert_eq!(g.index(g.node(i)), i);
        }
    }

    #[test]
    fn default_bounds_cover_stationary_law() {
        let m = GameModel::worked_example();
        let (lo, hi) = default_x_bounds(&m);
        let spread = 4.0 * 0.3 / 0.02f64.sqrt();
        assert!((lo - (35f64.ln() - spread)).abs() < 1e-12);
        assert!((hi - (50f64.ln() + spread)).abs() < 1e-12);
        assert!(lo < 15f64.ln() && 15f64.ln() < hi);
        let g = SolverGrid::new(&m, &GridSpec::default()).unwrap();
        assert!(g.h_x > 0.0 && g.h_x < 1.0);
        assert!(g.k > 0.0 && g.k < 1.0);
        // time step respects the explicit positivity limit
        let rate = spatial_rate(&m, g.x_min, g.x_max, g.h_x, g.h_y);
        assert!(g.k * rate <= 1.0 + 1e-12);
    }

    #[test]
    fn break_even_widens_window() {
        let mut m = GameModel::worked_example();
        m.cost.m = 2000.0;
        let (_, hi) = default_x_bounds(&m);
        assert!(hi >= 2000f64.ln() + 1.0 - 1e-12);
    }

    #[test]
    fn rejects_coarse_or_degenerate_grids() {
        let m = GameModel::worked_example();
        let bad = |spec: GridSpec| SolverGrid::new(&m, &spec).is_err();
        assert!(bad(GridSpec { n_x: 2, ..GridSpec::default() }));
        assert!(bad(GridSpec { n_y: 1, ..GridSpec::default() }));
        assert!(bad(GridSpec { n_t: Some(1), ..GridSpec::default() }));
        assert!(bad(GridSpec { n_x: 5, ..GridSpec::default() }));
        assert!(bad(GridSpec {
            x_min: Some(3.0),
            x_max: Some(1.0),
            ..GridSpec::default()
        }));
    }

    #[test]
    fn upwind_x_differences() {
        let g = grid();
        let lin = field(&g, |x, _| 2.0 * x);
        let cst = field(&g, |_, _| 4.0);
        let sq = field(&g, |x, _| x * x);
        for ix in 0..g.n_x {
            for drift in [-1.0, 0.0, 1.0] {
                let n = NodeIndex::new(1, ix, 3);
                assert!((g.diff_x_upwind(&lin, n, drift) - 2.0).abs() < 1e-12);
                assert_eq!(g.diff_x_upwind(&cst, n, drift), 0.0);
            }
        }
        // f = x² at x = 1, h = 0.1, forward → 2.1
        let n = NodeIndex::new(0, 10, 0);
        assert!((g.diff_x_upwind(&sq, n, 1.0) - 2.1).abs() < 1e-12);
        assert!((g.diff_x_upwind(&sq, n, -1.0) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn second_differences() {
        let g = grid();
        let sq = field(&g, |x, _| x * x);
        let lin = field(&g, |x, _| 3.0 * x - 1.0);
        let cube = field(&g, |x, _| x.powi(3));
        for ix in 0..g.n_x {
            let n = NodeIndex::new(0, ix, 2);
            assert!((g.diff_xx(&sq, n) - 2.0).abs() < 1e-9);
            assert!(g.diff_xx(&lin, n).abs() < 1e-9);
        }
        let v = g.diff_xx(&cube, NodeIndex::new(0, 10, 0));
        assert!((5.9..=6.1).contains(&v), "{v}");
    }

    #[test]
    fn y_differences() {
        let g = grid();
        let lin = field(&g, |_, y| 3.0 * y);
        let cst = field(&g, |_, _| -2.0);
        for iy in 1..g.n_y {
            let n = NodeIndex::new(1, 7, iy);
            assert!((g.diff_y_upwind(&lin, n) - 3.0).abs() < 1e-9);
            assert_eq!(g.diff_y_upwind(&cst, n), 0.0);
        }
        assert_eq!(g.diff_y_upwind(&lin, NodeIndex::new(0, 3, 0)), 0.0);
    }

    #[test]
    fn terminal_field_and_bound() {
        let m = GameModel::worked_example();
        let g = grid();
        let f = ValueField::terminal(&m, &g);
        assert_eq!(f.sup_norm(Player::Company), 0.0);
        let n = NodeIndex::new(0, 40, 10);
        assert!((f.get(&g, Player::Government, n) - 1e7 * (4f64.exp() - 15.0)).abs() < 1e-3);
        let b = a_priori_bound(&m, &g);
        assert!(b[1] >= f.sup_norm(Player::Government));
        assert!(b[0] > 0.0);
    }

    #[test]
    fn nearest_lookup_clamps() {
        let g = grid();
        assert_eq!(g.nearest_ix(-5.0), 0);
        assert_eq!(g.nearest_ix(100.0), 40);
        assert_eq!(g.nearest_ix(1.04), 10);
        assert_eq!(g.nearest_iy(4.6e6), 5);
    }

    #[test]
    fn values_csv_layout() {
        let m = GameModel::worked_example();
        let g = grid();
        let levels: Vec<ValueField> = (0..g.n_t)
            .map(|t| {
                let mut f = ValueField::terminal(&m, &g);
                f.time_index = t;
                f
            })
            .collect();
        let mut buf = Vec::new();
        write_values_csv(&mut buf, &g, &levels, 5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x,y,regime,V1,V2");
        // levels 0, 5, 10
        assert_eq!(text.lines().count(), 1 + 3 * g.level_len());
    }
}
