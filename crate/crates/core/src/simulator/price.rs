use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::model::{JumpDensity, PriceDynamics};

use super::regime::RegimePath;

/// Draws from the truncated mark density by rejection.
pub(crate) fn sample_mark<R: Rng + ?Sized>(density: &JumpDensity, z_trunc: f64, rng: &mut R) -> f64 {
    match *density {
        JumpDensity::Normal { mean, std_dev } => loop {
            let z = mean + std_dev * rng.sample::<f64, _>(StandardNormal);
            if z.abs() <= z_trunc {
                return z;
            }
        },
    }
}

/// Per-regime constants of the Euler step.
#[derive(Debug, Clone)]
pub(crate) struct PriceStepper {
    kappa: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    gamma: Vec<f64>,
    intensity: Vec<f64>,
    /// `γ Γ E[z 1{|z|<1}]` per regime.
    compensator: Vec<f64>,
    density: JumpDensity,
    z_trunc: f64,
    symmetric: bool,
}

impl PriceStepper {
    pub fn new(d: &PriceDynamics) -> Self {
        let small = d.jumps.small_jump_mean();
        Self {
            kappa: d.kappa,
            mu: d.mu_log.clone(),
            sigma: d.sigma.clone(),
            gamma: d.gamma.clone(),
            intensity: d.jumps.intensity.clone(),
            compensator: (0..d.n_regimes())
                .map(|i| d.gamma[i] * d.jumps.intensity[i] * small)
                .collect(),
            density: d.jumps.density.clone(),
            z_trunc: d.jumps.z_trunc,
            symmetric: d.jumps.density.is_symmetric(),
        }
    }

    /// Advances `x` by `h` in regime `i`. With `sign = -1` the Gaussian
    /// increment and, for a symmetric mark law, the jump marks are negated.
    pub fn step<R: Rng + ?Sized>(&self, i: usize, x: f64, h: f64, sign: f64, rng: &mut R) -> f64 {
        let w: f64 = rng.sample(StandardNormal);
        let mut nx = x + (self.kappa * (self.mu[i] - x) - self.compensator[i]) * h
            + self.sigma[i] * h.sqrt() * sign * w;
        let lambda = self.intensity[i] * h;
        if lambda > 0.0 {
            let count = Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0) as usize;
            let mark_sign = if self.symmetric { sign } else { 1.0 };
            for _ in 0..count {
                nx += self.gamma[i] * mark_sign * sample_mark(&self.density, self.z_trunc, rng);
            }
        }
        nx
    }
}

/// Sampled log-price trajectory; knots include every regime switch.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub regime: Vec<usize>,
}

/// Step boundaries on `[start, end]` every `dt`, refined at `extra` times.
pub(crate) fn knots(start: f64, end: f64, dt: f64, extra: &[f64]) -> Vec<f64> {
    let n = ((end - start) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut out: Vec<f64> = (0..n).map(|k| start + k as f64 * dt).collect();
    out.push(end);
    out.extend(extra.iter().copied().filter(|s| *s > start && *s < end));
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

pub fn simulate_price_with<R: Rng + ?Sized>(
    dynamics: &PriceDynamics,
    regimes: &RegimePath,
    x0: f64,
    dt: f64,
    rng: &mut R,
) -> PricePath {
    let stepper = PriceStepper::new(dynamics);
    let t = knots(regimes.times[0], regimes.end, dt, &regimes.times);
    let mut x = Vec::with_capacity(t.len());
    let mut regime = Vec::with_capacity(t.len());
    x.push(x0);
    regime.push(regimes.regime_at(t[0]));
    for w in t.windows(2) {
        let i = regimes.regime_at(w[0]);
        let last = *x.last().unwrap_or(&x0);
        x.push(stepper.step(i, last, w[1] - w[0], 1.0, rng));
        regime.push(regimes.regime_at(w[1]));
    }
    PricePath { t, x, regime }
}

pub fn simulate_price(
    dynamics: &PriceDynamics,
    regimes: &RegimePath,
    x0: f64,
    dt: f64,
    seed: u64,
) -> PricePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_price_with(dynamics, regimes, x0, dt, &mut rng)
}
