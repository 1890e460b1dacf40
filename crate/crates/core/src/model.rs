//! Game parameters, payoff rates and terminal payoffs.
//!
//! The state is `(x, y, i)`: log-price `x`, remaining reserve `y` and market
//! regime `i`. Player 1 is the extraction company choosing `u1 ∈ [0, ū₁]`,
//! player 2 is the government choosing the tax rate `u2 ∈ [0, ū₂]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

/// Tolerance used when checking that generator rows sum to zero.
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One failed invariant, reported by [`GameModel::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    Company,
    Government,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::Company, Player::Government];

    /// Zero-based storage index.
    pub fn index(self) -> usize {
        match self {
            Player::Company => 0,
            Player::Government => 1,
        }
    }

    /// One-based label used in files and on the command line.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::Company => Player::Government,
            Player::Government => Player::Company,
        }
    }
}

impl TryFrom<u8> for Player {
    type Error = ModelError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Player::Company),
            2 => Ok(Player::Government),
            other => Err(ModelError::Domain(format!(
                "player index {other} is not 1 or 2"
            ))),
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Generator `Q` of the market-regime Markov chain (rates per year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegimeGenerator {
    rates: Vec<Vec<f64>>,
}

impl RegimeGenerator {
    pub fn new(rates: Vec<Vec<f64>>) -> Self {
        Self { rates }
    }

    /// Absorbing chain with `n` regimes.
    pub fn zero(n: usize) -> Self {
        Self::new(vec![vec![0.0; n]; n])
    }

    pub fn n_regimes(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[from][to]
    }

    /// Total exit rate `Σ_{j≠i} q_ij`.
    pub fn exit_rate(&self, from: usize) -> f64 {
        self.rates[from]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != from)
            .map(|(_, q)| *q)
            .sum()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rates
    }

    fn check(&self, out: &mut Vec<Violation>) {
        let n = self.rates.len();
        if n == 0 {
            out.push(Violation::new("generator", "has no regimes"));
            return;
        }
        for (i, row) in self.rates.iter().enumerate() {
            if row.len() != n {
                out.push(Violation::new(
                    "generator",
                    format!("row {} has {} entries, expected {n}", i + 1, row.len()),
                ));
                continue;
            }
            for (j, q) in row.iter().enumerate() {
                if !q.is_finite() {
                    out.push(Violation::new(
                        "generator",
                        format!("entry ({},{}) is not finite", i + 1, j + 1),
                    ));
                } else if i != j && *q < 0.0 {
                    out.push(Violation::new(
                        "generator",
                        format!("off-diagonal entry ({},{}) is negative", i + 1, j + 1),
                    ));
                }
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                out.push(Violation::new(
                    "generator",
                    format!("row sum nonzero (row {} sums to {sum})", i + 1),
                ));
            }
        }
    }
}

/// Jump-mark density `φ`, truncated to `[-z_trunc, z_trunc]` and renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpDensity {
    Normal { mean: f64, std_dev: f64 },
}

impl Default for JumpDensity {
    fn default() -> Self {
        JumpDensity::Normal {
            mean: 0.0,
            std_dev: 1.0,
        }
    }
}

impl JumpDensity {
    fn normal(&self) -> Option<Normal> {
        match *self {
            JumpDensity::Normal { mean, std_dev } => Normal::new(mean, std_dev).ok(),
        }
    }

    fn untruncated_pdf(&self, z: f64) -> f64 {
        self.normal().map_or(0.0, |n| n.pdf(z))
    }

    fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.normal().map_or(0.0, |n| n.cdf(hi) - n.cdf(lo))
    }

    /// `∫_lo^hi z φ(z) dz` for the untruncated law.
    fn first_moment(&self, lo: f64, hi: f64) -> f64 {
        match (self, self.normal()) {
            (JumpDensity::Normal { mean, std_dev }, Some(n)) => {
                mean * (n.cdf(hi) - n.cdf(lo)) + std_dev * std_dev * (n.pdf(lo) - n.pdf(hi))
            }
            _ => 0.0,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            JumpDensity::Normal { mean, .. } => mean == 0.0,
        }
    }
}

/// Finite-intensity jump measure `ν_i(dz) = Γ(i) φ(z) dz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    /// Expected number of jumps per year in each regime.
    pub intensity: Vec<f64>,
    #[serde(default)]
    pub density: JumpDensity,
    #[serde(default = "default_z_trunc")]
    pub z_trunc: f64,
}

fn default_z_trunc() -> f64 {
    5.0
}

impl JumpSpec {
    pub fn none(n_regimes: usize) -> Self {
        Self {
            intensity: vec![0.0; n_regimes],
            density: JumpDensity::default(),
            z_trunc: default_z_trunc(),
        }
    }

    /// Truncated, renormalized mark density.
    pub fn density_at(&self, z: f64) -> f64 {
        if z.abs() > self.z_trunc {
            return 0.0;
        }
        let mass = self.density.mass(-self.z_trunc, self.z_trunc);
        if mass > 0.0 {
            self.density.untruncated_pdf(z) / mass
        } else {
            0.0
        }
    }

    /// `E[z 1{|z|<1}]` under the truncated density.
    pub fn small_jump_mean(&self) -> f64 {
        let mass = self.density.mass(-self.z_trunc, self.z_trunc);
        let hi = self.z_trunc.min(1.0);
        if mass > 0.0 {
            self.density.first_moment(-hi, hi) / mass
        } else {
            0.0
        }
    }

    pub fn max_intensity(&self) -> f64 {
        self.intensity.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self, n: usize, out: &mut Vec<Violation>) {
        if self.intensity.len() != n {
            out.push(Violation::new(
                "jumps.intensity",
                format!("has {} entries, expected {n}", self.intensity.len()),
            ));
        }
        for (i, g) in self.intensity.iter().enumerate() {
            if !g.is_finite() || *g < 0.0 {
                out.push(Violation::new(
                    "jumps.intensity",
                    format!("regime {} intensity {g} must be finite and >= 0", i + 1),
                ));
            }
        }
        if !(self.z_trunc.is_finite() && self.z_trunc >= 1.0) {
            out.push(Violation::new("jumps.z_trunc", "must be finite and >= 1"));
        }
        match self.density {
            JumpDensity::Normal { mean, std_dev } => {
                if !(mean.is_finite() && std_dev.is_finite() && std_dev > 0.0) {
                    out.push(Violation::new(
                        "jumps.density",
                        "normal density needs finite mean and std_dev > 0",
                    ));
                } else if self.density.mass(-self.z_trunc, self.z_trunc) < 1e-12 {
                    out.push(Violation::new(
                        "jumps.density",
                        "has no mass inside the truncation window",
                    ));
                }
            }
        }
    }
}

/// Mean-reverting regime-switching jump diffusion for the log-price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceDynamics {
    pub kappa: f64,
    /// Equilibrium log-price per regime.
    pub mu_log: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub generator: RegimeGenerator,
    pub jumps: JumpSpec,
}

impl PriceDynamics {
    pub fn n_regimes(&self) -> usize {
        self.mu_log.len()
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self, out: &mut Vec<Violation>) {
        let n = self.mu_log.len();
        if n == 0 {
            out.push(Violation::new("dynamics.mu_log", "needs at least one regime"));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            out.push(Violation::new("dynamics.kappa", "must be finite and >= 0"));
        }
        for (name, v) in [("dynamics.sigma", &self.sigma), ("dynamics.gamma", &self.gamma)] {
            if v.len() != n {
                out.push(Violation::new(
                    name,
                    format!("has {} entries, expected {n}", v.len()),
                ));
            }
        }
        if self.mu_log.iter().any(|m| !m.is_finite()) {
            out.push(Violation::new("dynamics.mu_log", "entries must be finite"));
        }
        for (i, s) in self.sigma.iter().enumerate() {
            if !(s.is_finite() && *s >= 0.0) {
                out.push(Violation::new(
                    "dynamics.sigma",
                    format!("regime {} volatility {s} must be finite and >= 0", i + 1),
                ));
            }
        }
        for (i, g) in self.gamma.iter().enumerate() {
            if !g.is_finite() || *g == 0.0 {
                out.push(Violation::new(
                    "dynamics.gamma",
                    format!("regime {} jump scale must be finite and nonzero", i + 1),
                ));
            }
        }
        if self.generator.n_regimes() != n {
            out.push(Violation::new(
                "generator",
                format!("is {0}x{0}, expected {n}x{n}", self.generator.n_regimes()),
            ));
        }
        self.generator.check(out);
        self.jumps.check(n, out);
    }
}

/// Extraction cost `C(y, u) = a + m·u·(c − b·y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub a: f64,
    pub m: f64,
    pub b: f64,
    pub c: f64,
}

impl CostModel {
    pub fn cost(&self, y: f64, u1: f64) -> f64 {
        self.a + self.m * u1 * (self.c - self.b * y)
    }

    /// Marginal cost per unit extracted at reserve level `y`.
    pub fn unit_cost(&self, y: f64) -> f64 {
        self.m * (self.c - self.b * y)
    }

    fn check(&self, out: &mut Vec<Violation>) {
        if !(self.a.is_finite() && self.a > 0.0) {
            out.push(Violation::new("cost.a", "must be > 0"));
        }
        if !(self.m.is_finite() && self.m > 0.0) {
            out.push(Violation::new("cost.m", "must be > 0"));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            out.push(Violation::new("cost.b", "must be >= 0"));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            out.push(Violation::new("cost.c", "must be >= 0"));
        }
    }
}

/// One game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameModel {
    pub dynamics: PriceDynamics,
    pub cost: CostModel,
    /// Company's profit share.
    pub theta: f64,
    /// Discount rate per year.
    pub discount_rate: f64,
    /// Lease horizon in years.
    pub horizon: f64,
    /// Initial reserve.
    pub reserve: f64,
    pub u1_max: f64,
    pub u2_max: f64,
    /// Per-unit cost subtracted from the price in the government's terminal payoff.
    pub terminal_unit_cost: f64,
}

impl GameModel {
    pub fn n_regimes(&self) -> usize {
        self.dynamics.n_regimes()
    }

    /// Returns every violated invariant; an empty list means the model is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        self.dynamics.check(&mut out);
        self.cost.check(&mut out);
        if !(self.theta > 0.0 && self.theta < 1.0) {
            out.push(Violation::new("theta", "out of (0,1)"));
        }
        if !(self.discount_rate.is_finite() && self.discount_rate > 0.0) {
            out.push(Violation::new("discount_rate", "must be > 0"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            out.push(Violation::new("horizon", "must be > 0"));
        }
        if !(self.reserve.is_finite() && self.reserve > 0.0) {
            out.push(Violation::new("reserve", "must be > 0"));
        }
        if !(self.u1_max.is_finite() && self.u1_max >= 0.0) {
            out.push(Violation::new("u1_max", "must be >= 0"));
        }
        if !(self.u2_max >= 0.0 && self.u2_max <= 1.0) {
            out.push(Violation::new("u2_max", "out of [0,1]"));
        }
        if !self.terminal_unit_cost.is_finite() {
            out.push(Violation::new("terminal_unit_cost", "must be finite"));
        }
        out
    }

    pub fn validated(self) -> Result<Self, ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    fn check_state(&self, y: f64, u1: f64) -> Result<(), ModelError> {
        if !(0.0..=self.reserve).contains(&y) {
            return Err(ModelError::Domain(format!(
                "reserve {y} outside [0, {}]",
                self.reserve
            )));
        }
        if !(0.0..=self.u1_max).contains(&u1) {
            return Err(ModelError::Domain(format!(
                "extraction rate {u1} outside [0, {}]",
                self.u1_max
            )));
        }
        Ok(())
    }

    /// Profit rate `P = e^x·u1 − C(y, u1)` before sharing and tax.
    pub fn profit_rate(&self, x: f64, y: f64, u1: f64) -> Result<f64, ModelError> {
        self.check_state(y, u1)?;
        Ok(self.profit_rate_unchecked(x, y, u1))
    }

    #[inline]
    pub fn profit_rate_unchecked(&self, x: f64, y: f64, u1: f64) -> f64 {
        x.exp() * u1 - self.cost.cost(y, u1)
    }

    /// Running payoff `L₁ = θP(1−u2)` or `L₂ = (1−θ)P + u2·θP`.
    pub fn running_payoff(
        &self,
        player: Player,
        x: f64,
        y: f64,
        u1: f64,
        u2: f64,
    ) -> Result<f64, ModelError> {
        self.check_state(y, u1)?;
        if !(0.0..=self.u2_max).contains(&u2) {
            return Err(ModelError::Domain(format!(
                "tax rate {u2} outside [0, {}]",
                self.u2_max
            )));
        }
        let p = self.profit_rate_unchecked(x, y, u1);
        Ok(split_profit(player, self.theta, p, u2))
    }

    /// Terminal payoff: zero for the company, `y(e^x − m̄)` for the government.
    pub fn terminal_payoff(&self, player: Player, x: f64, y: f64) -> Result<f64, ModelError> {
        if !(0.0..=self.reserve).contains(&y) {
            return Err(ModelError::Domain(format!(
                "reserve {y} outside [0, {}]",
                self.reserve
            )));
        }
        Ok(self.terminal_payoff_unchecked(player, x, y))
    }

    #[inline]
    pub fn terminal_payoff_unchecked(&self, player: Player, x: f64, y: f64) -> f64 {
        match player {
            Player::Company => 0.0,
            Player::Government => y * (x.exp() - self.terminal_unit_cost),
        }
    }

    /// The worked example: 10-year lease, 40% profit share, two regimes.
    ///
    /// Reserves are in thousands of barrels, so `reserve = 1e7` is ten
    /// billion barrels. The discount rate is not part of the example and
    /// defaults to 5% per year.
    pub fn worked_example() -> Self {
        Self {
            dynamics: PriceDynamics {
                kappa: 0.01,
                mu_log: vec![50f64.ln(), 35f64.ln()],
                sigma: vec![0.1, 0.3],
                gamma: vec![1.0, 1.0],
                generator: RegimeGenerator::new(vec![vec![-0.005, 0.005], vec![0.002, -0.002]]),
                jumps: JumpSpec {
                    intensity: vec![0.01, 0.15],
                    density: JumpDensity::default(),
                    z_trunc: 5.0,
                },
            },
            cost: CostModel {
                a: 10.0,
                m: 15.0,
                b: 0.0,
                c: 1.0,
            },
            theta: 0.4,
            discount_rate: 0.05,
            horizon: 10.0,
            reserve: 1.0e7,
            u1_max: 50_000.0,
            u2_max: 0.3,
            terminal_unit_cost: 15.0,
        }
    }
}

#[inline]
pub(crate) fn split_profit(player: Player, theta: f64, p: f64, u2: f64) -> f64 {
    match player {
        Player::Company => theta * p * (1.0 - u2),
        Player::Government => (1.0 - theta) * p + u2 * theta * p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> GameModel {
        GameModel::worked_example()
    }

    #[test]
    fn profit_rate_examples() {
        let m = example();
        let p = m.profit_rate(20f64.ln(), 0.0, 1.0).unwrap();
        assert!((p + 5.0).abs() < 1e-12);
        assert_eq!(m.profit_rate(1.3, 100.0, 0.0).unwrap(), -10.0);
        // break-even: e^x·u = 10 + 15u at u = 50000
        let p = m.profit_rate(15.0002f64.ln(), 0.0, 50_000.0).unwrap();
        assert!(p.abs() < 1e-6, "{p}");
    }

    #[test]
    fn profit_rate_rejects_out_of_range() {
        let m = example();
        assert!(matches!(
            m.profit_rate(0.0, 0.0, 60_000.0),
            Err(ModelError::Domain(_))
        ));
        assert!(matches!(
            m.profit_rate(0.0, -1.0, 1.0),
            Err(ModelError::Domain(_))
        ));
        assert!(m.profit_rate(0.0, 2.0e7, 1.0).is_err());
    }

    #[test]
    fn running_payoff_split() {
        // θ=0.4, P=100, u2=0.3 → 28 / 72
        let theta = 0.4;
        assert!((split_profit(Player::Company, theta, 100.0, 0.3) - 28.0).abs() < 1e-12);
        assert!((split_profit(Player::Government, theta, 100.0, 0.3) - 72.0).abs() < 1e-12);
        assert!((split_profit(Player::Company, theta, 100.0, 0.0) - 40.0).abs() < 1e-12);
        assert!((split_profit(Player::Government, theta, 100.0, 0.0) - 60.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_player_index() {
        assert!(Player::try_from(3).is_err());
        assert_eq!(Player::try_from(2).unwrap(), Player::Government);
    }

    #[test]
    fn terminal_payoffs() {
        let m = example();
        assert_eq!(m.terminal_payoff(Player::Government, 3.0, 0.0).unwrap(), 0.0);
        let v = m
            .terminal_payoff(Player::Government, 15f64.ln(), 12345.0)
            .unwrap();
        assert!(v.abs() < 1e-8);
        assert_eq!(m.terminal_payoff(Player::Company, 9.0, 1e6).unwrap(), 0.0);
        assert!(m.terminal_payoff(Player::Government, 1.0, 1e6).unwrap() < 0.0);
    }

    #[test]
    fn worked_example_validates() {
        assert!(example().validate().is_empty());
    }

    #[test]
    fn theta_violation() {
        let mut m = example();
        m.theta = 1.2;
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "theta out of (0,1)");
    }

    #[test]
    fn generator_row_sum_violation() {
        let mut m = example();
        m.dynamics.generator = RegimeGenerator::new(vec![vec![-0.005, 0.006], vec![0.002, -0.002]]);
        let v = m.validate();
        assert!(v.iter().any(|x| x.to_string().contains("generator row sum nonzero")));
    }

    #[test]
    fn validate_reports_all_violations() {
        let mut m = example();
        m.theta = 0.0;
        m.discount_rate = -1.0;
        m.u2_max = 2.0;
        m.cost.m = 0.0;
        assert_eq!(m.validate().len(), 4);
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        let j = example().dynamics.jumps;
        let n = 20_000;
        let h = 2.0 * j.z_trunc / n as f64;
        let s: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * j.density_at(-j.z_trunc + k as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((s - 1.0).abs() < 1e-7, "{s}");
        assert!(j.small_jump_mean().abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn payoffs_split_profit_exactly(
            x in -3.0f64..6.0, y in 0.0f64..1e7, u1 in 0.0f64..50_000.0, u2 in 0.0f64..0.3
        ) {
            let m = example();
            let p = m.profit_rate(x, y, u1).unwrap();
            let l1 = m.running_payoff(Player::Company, x, y, u1, u2).unwrap();
            let l2 = m.running_payoff(Player::Government, x, y, u1, u2).unwrap();
            prop_assert!((l1 + l2 - p).abs() <= 1e-12 * (1.0 + p.abs()));
        }

        #[test]
        fn tax_slope_sign_follows_profit(
            x in -3.0f64..6.0, u1 in 0.0f64..50_000.0, a in 0.0f64..0.3, b in 0.0f64..0.3
        ) {
            let m = example();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = m.profit_rate(x, 0.0, u1).unwrap();
            let l1 = |u2| m.running_payoff(Player::Company, x, 0.0, u1, u2).unwrap();
            let l2 = |u2| m.running_payoff(Player::Government, x, 0.0, u1, u2).unwrap();
            if p >= 0.0 {
                prop_assert!(l1(hi) <= l1(lo));
                prop_assert!(l2(hi) >= l2(lo));
            } else {
                prop_assert!(l1(hi) >= l1(lo));
                prop_assert!(l2(hi) <= l2(lo));
            }
        }

        #[test]
        fn terminal_payoff_linear_in_reserve(x in -3.0f64..6.0, y in 0.0f64..5e6) {
            let m = example();
            let f = |y| m.terminal_payoff(Player::Government, x, y).unwrap();
            let lin = f(2.0 * y) - 2.0 * f(y);
            prop_assert!(lin.abs() <= 1e-9 * (1.0 + f(2.0 * y).abs()));
            if x.exp() > m.terminal_unit_cost {
                prop_assert!(f(y + 1.0) > f(y));
            } else {
                prop_assert!(f(y + 1.0) <= f(y));
            }
        }
    }
}
