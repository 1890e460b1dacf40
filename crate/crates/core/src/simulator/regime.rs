use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::model::RegimeGenerator;

/// Piecewise-constant regime trajectory on `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    /// Entry time of each visited regime; `times[0]` is the start.
    pub times: Vec<f64>,
    pub regimes: Vec<usize>,
    pub end: f64,
}

impl RegimePath {
    pub fn regime_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|s| *s <= t);
        self.regimes[k.saturating_sub(1)]
    }

    pub fn switches(&self) -> usize {
        self.regimes.len() - 1
    }

    /// Time spent in each regime.
    pub fn occupation(&self, n_regimes: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_regimes];
        for (k, &r) in self.regimes.iter().enumerate() {
            let until = self.times.get(k + 1).copied().unwrap_or(self.end);
            occ[r] += until - self.times[k];
        }
        occ
    }

    /// Number of `from → to` transitions.
    pub fn transitions(&self, from: usize, to: usize) -> usize {
        self.regimes
            .windows(2)
            .filter(|w| w[0] == from && w[1] == to)
            .count()
    }
}

/// Exact simulation: exponential holding times with rate `−q_ii`, then a jump
/// to `n ≠ i` with probability `q_in / −q_ii`.
pub fn simulate_regime_with<R: Rng + ?Sized>(
    q: &RegimeGenerator,
    regime0: usize,
    start: f64,
    end: f64,
    rng: &mut R,
) -> RegimePath {
    let mut times = vec![start];
    let mut regimes = vec![regime0];
    let mut t = start;
    let mut i = regime0;
    loop {
        let rate = q.exit_rate(i);
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / rate;
        t += hold;
        if t >= end {
            break;
        }
        let mut pick = rng.random::<f64>() * rate;
        let mut next = i;
        for n in (0..q.n_regimes()).filter(|&n| n != i) {
            let r = q.rate(i, n);
            next = n;
            if pick < r {
                break;
            }
            pick -= r;
        }
        i = next;
        times.push(t);
        regimes.push(i);
    }
    RegimePath {
        times,
        regimes,
        end,
    }
}

pub fn simulate_regime(
    q: &RegimeGenerator,
    regime0: usize,
    start: f64,
    end: f64,
    seed: u64,
) -> RegimePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_regime_with(q, regime0, start, end, &mut rng)
}
