use proptest::prelude::*;

use oilgame::grid::{GridSpec, SolverGrid};
use oilgame::model::{GameModel, JumpDensity, JumpSpec, Player, PriceDynamics, RegimeGenerator};
use oilgame::policy::PolicyField;
use oilgame::simulator::{
    constant, dump_paths, paired_gain, run_game, simulate_price, simulate_regime, PathConfig,
    SimError, StartState,
};
use oilgame::solver::{regime_quadratures, solve_nash, SolverOptions};

fn coarse_grid(m: &GameModel) -> SolverGrid {
    SolverGrid::new(
        m,
        &GridSpec {
            n_x: 41,
            n_y: 21,
            ..GridSpec::default()
        },
    )
    .unwrap()
}

fn solved() -> (GameModel, PolicyField) {
    let m = GameModel::worked_example();
    let g = coarse_grid(&m);
    let quads = regime_quadratures(&m, 0.1).unwrap();
    let sol = solve_nash(&m, &g, &quads, &SolverOptions::default()).unwrap();
    (m, sol.policies)
}

fn start(x0: f64, y0: f64) -> StartState {
    StartState {
        t0: 0.0,
        x0,
        y0,
        regime: 0,
    }
}

fn cfg(n_paths: usize) -> PathConfig {
    PathConfig {
        n_paths,
        ..PathConfig::default()
    }
}

fn annuity(m: &GameModel) -> f64 {
    (1.0 - (-m.discount_rate * m.horizon).exp()) / m.discount_rate
}

#[test]
fn idle_company_pays_the_discounted_fixed_cost() {
    let m = GameModel::worked_example();
    let p = PolicyField::zeros(&coarse_grid(&m), &m);
    let est = run_game(&m, &p, start(50f64.ln(), m.reserve), &cfg(200)).unwrap();
    let want = -m.theta * m.cost.a * annuity(&m);
    assert!((est.company.mean - want).abs() <= 1e-6 * want.abs(), "{} vs {want}", est.company.mean);
    assert!(est.company.std_dev <= 1e-9 * want.abs());
}

#[test]
fn empty_reserve_leaves_only_the_fixed_cost() {
    let (m, p) = solved();
    let est = run_game(&m, &p, start(60f64.ln(), 0.0), &cfg(200)).unwrap();
    let a = annuity(&m);
    let j1 = -m.theta * m.cost.a * a;
    let j2 = -(1.0 - m.theta) * m.cost.a * a;
    assert!((est.company.mean - j1).abs() <= 1e-6 * j1.abs(), "{} vs {j1}", est.company.mean);
    assert!((est.government.mean - j2).abs() <= 1e-6 * j2.abs(), "{} vs {j2}", est.government.mean);
}

#[test]
fn a_policy_gains_nothing_against_itself() {
    let (m, p) = solved();
    for player in Player::BOTH {
        let g = paired_gain(&m, &p, &p, player, start(40f64.ln(), m.reserve), &cfg(500)).unwrap();
        assert_eq!(g.mean, 0.0);
        assert_eq!(g.half_width, 0.0);
    }
}

#[test]
fn never_extracting_at_a_high_price_is_strictly_worse() {
    let (m, p) = solved();
    let idle = constant(&p, Player::Company, 0.0);
    let g = paired_gain(&m, &p, &idle, Player::Company, start(60f64.ln(), m.reserve), &cfg(2000)).unwrap();
    assert!(g.mean + g.half_width < 0.0, "gain {} ± {}", g.mean, g.half_width);
}

#[test]
fn dropping_the_tax_does_not_help_the_government() {
    let (m, p) = solved();
    let untaxed = constant(&p, Player::Government, 0.0);
    let s = start(50f64.ln(), m.reserve);
    let g = paired_gain(&m, &p, &untaxed, Player::Government, s, &cfg(2000)).unwrap();
    assert!(g.mean <= g.half_width, "gain {} ± {}", g.mean, g.half_width);
}

#[test]
fn fixed_seed_is_bit_reproducible() {
    let (m, p) = solved();
    let s = start(45f64.ln(), 0.5 * m.reserve);
    let a = run_game(&m, &p, s, &cfg(1000)).unwrap();
    let b = run_game(&m, &p, s, &cfg(1000)).unwrap();
    assert_eq!(a, b);
    let c = run_game(
        &m,
        &p,
        s,
        &PathConfig {
            seed: 7,
            ..cfg(1000)
        },
    )
    .unwrap();
    assert_ne!(a.company.mean, c.company.mean);
}

#[test]
fn confidence_interval_shrinks_with_the_square_root_of_paths() {
    // jump-free, so the sample variance settles at these path counts
    let (mut m, p) = solved();
    m.dynamics.jumps = JumpSpec::none(m.n_regimes());
    let s = start(40f64.ln(), m.reserve);
    let small = run_game(&m, &p, s, &cfg(4000)).unwrap();
    let large = run_game(&m, &p, s, &cfg(16_000)).unwrap();
    for player in Player::BOTH {
        let ratio = large.player(player).half_width / small.player(player).half_width;
        assert!((0.4..=0.6).contains(&ratio), "player {player}: ratio {ratio}");
    }
}

#[test]
fn symmetric_jumps_leave_the_mean_log_price_unchanged() {
    let base = PriceDynamics {
        kappa: 0.5,
        mu_log: vec![50f64.ln()],
        sigma: vec![0.2],
        gamma: vec![0.3],
        generator: RegimeGenerator::zero(1),
        jumps: JumpSpec::none(1),
    };
    let jumpy = PriceDynamics {
        jumps: JumpSpec {
            intensity: vec![2.0],
            density: JumpDensity::Normal {
                mean: 0.0,
                std_dev: 1.0,
            },
            z_trunc: 5.0,
        },
        ..base.clone()
    };
    let horizon = 2.0;
    let x0 = 20f64.ln();
    let n = 20_000;
    let terminal = |d: &PriceDynamics, salt: u64| -> Vec<f64> {
        (0..n as u64)
            .map(|j| {
                let regimes = simulate_regime(&d.generator, 0, 0.0, horizon, j);
                *simulate_price(d, &regimes, x0, 0.01, salt + j).x.last().unwrap()
            })
            .collect()
    };
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (mean, var / v.len() as f64)
    };
    let (m0, v0) = stats(&terminal(&base, 1_000_000));
    let (m1, v1) = stats(&terminal(&jumpy, 2_000_000));
    let se = (v0 + v1).sqrt();
    assert!((m1 - m0).abs() <= 3.0 * se, "{m1} vs {m0}, se {se}");
}

#[test]
fn lookups_outside_the_lattice_are_counted() {
    let (m, p) = solved();
    let inside = run_game(&m, &p, start(40f64.ln(), m.reserve), &cfg(200)).unwrap();
    let outside = run_game(&m, &p, start(20.0, m.reserve), &cfg(200)).unwrap();
    assert!(outside.clamp_fraction() > 0.5, "{}", outside.clamp_fraction());
    assert!(inside.clamp_fraction() < outside.clamp_fraction());
    assert!(outside.steps > 0 && outside.clamped_steps <= outside.steps);
}

#[test]
fn invalid_starts_are_rejected() {
    let (m, p) = solved();
    let bad_reserve = start(40f64.ln(), 2.0 * m.reserve);
    assert!(matches!(run_game(&m, &p, bad_reserve, &cfg(10)), Err(SimError::Domain(_))));
    let bad_regime = StartState {
        regime: 5,
        ..start(40f64.ln(), m.reserve)
    };
    assert!(matches!(run_game(&m, &p, bad_regime, &cfg(10)), Err(SimError::Domain(_))));
    assert!(matches!(
        run_game(&m, &p, start(40f64.ln(), m.reserve), &cfg(0)),
        Err(SimError::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reserve_never_increases_and_stays_in_range(
        x0 in 2.5f64..4.5,
        frac in 0.0f64..=1.0,
        seed in 0u64..1000,
    ) {
        let m = GameModel::worked_example();
        let g = coarse_grid(&m);
        let greedy = constant(&PolicyField::zeros(&g, &m), Player::Company, m.u1_max);
        let c = PathConfig { n_paths: 4, seed, dt: 0.05, antithetic: false };
        let rows = dump_paths(&m, &greedy, start(x0, frac * m.reserve), &c, 4).unwrap();
        prop_assert!(!rows.is_empty());
        for w in rows.windows(2) {
            prop_assert!(w[0].y >= 0.0 && w[0].y <= m.reserve);
            if w[0].path == w[1].path {
                prop_assert!(w[1].y <= w[0].y);
            }
        }
    }
}
