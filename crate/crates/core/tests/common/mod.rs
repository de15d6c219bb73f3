//! Randomized invariant checks shared by the property suite and the
//! acceptance run. Each check drives its own proptest runner and returns the
//! first counterexample as an error message.

#![allow(dead_code)]

use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cnrq::cnrq::{
    smooth_max, stationary_distribution, transition_matrix, update_lambda, CnrqConfig, CnrqRun, SmoothMaxParams,
};
use cnrq::env::downlink::downlink_mbs_rate;
use cnrq::env::{make_synthetic_game, DownlinkParams, SyntheticGame, SyntheticTables};
use cnrq::game::{ce_residuals, conditional_policy, Game, JointPolicy, QTable};
use cnrq::learner::MultiAgentLearner;
use cnrq::oracle::exact_stationary;
use cnrq::schedule::StepSchedules;

pub const CASES: u32 = 128;

pub fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

/// Random synthetic game with up to `max_agents` agents of up to
/// `max_actions` actions and up to `max_states` states, all transition
/// probabilities positive.
pub fn random_game(seed: u64, max_agents: usize, max_actions: usize, max_states: usize) -> SyntheticGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = rng.gen_range(1..=max_agents);
    let actions: Vec<usize> = (0..agents).map(|_| rng.gen_range(1..=max_actions)).collect();
    let joint: usize = actions.iter().product();
    let states = rng.gen_range(1..=max_states);
    let mut table = |lo: f64, hi: f64| -> Vec<Vec<Vec<f64>>> {
        (0..agents)
            .map(|_| (0..states).map(|_| (0..joint).map(|_| rng.gen_range(lo..hi)).collect()).collect())
            .collect()
    };
    let utilities = table(-5.0, 5.0);
    let costs = table(0.0, 2.0);
    let transitions = (0..states)
        .map(|_| {
            (0..joint)
                .map(|_| {
                    let w: Vec<f64> = (0..states).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let total: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    make_synthetic_game(SyntheticTables {
        name: format!("random-{seed}"),
        actions,
        num_states: states,
        utilities,
        costs,
        cost_bounds: (0..agents).map(|_| rng.gen_range(0.2..1.8)).collect(),
        transitions,
        discount: rng.gen_range(0.0..0.95),
    })
    .expect("random tables are well formed")
}

/// Random `n x n` regret matrix with a zero diagonal.
fn regret_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|n| {
        (Just(n), prop::collection::vec(-10.0f64..10.0, n * n)).prop_map(|(n, mut r)| {
            for i in 0..n {
                r[i * n + i] = 0.0;
            }
            (n, r)
        })
    })
}

fn adaptive_mu(regret: &[f64], n: usize, delta: f64, headroom: f64) -> f64 {
    let worst = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| smooth_max(regret[i * n + j], delta)).sum::<f64>())
        .fold(0.0, f64::max);
    if worst > 0.0 {
        headroom * worst
    } else {
        1.0
    }
}

fn trembled(t: &[f64], n: usize, eps: f64) -> Vec<f64> {
    t.iter().map(|x| (1.0 - eps) * x + eps / n as f64).collect()
}

/// Visited empirical rows and every conditional posterior are distributions.
pub fn simplex_sums() -> Result<(), String> {
    run((any::<u64>(), 1usize..300), |(seed, steps)| {
        let game = Arc::new(random_game(seed, 3, 3, 3));
        let mut run = CnrqRun::new(game.clone(), CnrqConfig::default(), seed).unwrap();
        for _ in 0..steps {
            run.step().unwrap();
        }
        let emp = run.empirical();
        let space = game.joint_space();
        for s in 0..game.num_states() {
            let row = emp.policy.row(s);
            if emp.visits[s] == 0 {
                prop_assert!(row.iter().all(|&p| p == 0.0));
                continue;
            }
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for k in 0..space.num_agents() {
                for i in 0..space.actions(k) {
                    if let Ok(c) = conditional_policy(&emp.policy, space, s, k, i) {
                        prop_assert!(c.iter().all(|&p| p >= 0.0));
                        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
        prop_assert_eq!(emp.visits.iter().sum::<u64>(), steps as u64);
        Ok(())
    })
}

/// Transition matrices built with an adequate inertia constant are row
/// stochastic with a positive diagonal.
pub fn row_stochasticity() -> Result<(), String> {
    run((regret_strategy(), 1e-4f64..1.0, 1.01f64..5.0), |((n, r), delta, headroom)| {
        let mu = adaptive_mu(&r, n, delta, headroom);
        let t = transition_matrix(&r, n, SmoothMaxParams { delta, mu }).unwrap();
        for i in 0..n {
            let row = &t[i * n..(i + 1) * n];
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!(row[i] > 0.0);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        Ok(())
    })
}

/// `|| p T~ - p ||_inf <= 1e-10`, and agreement with the oracle to 1e-9.
pub fn stationary_residual() -> Result<(), String> {
    run(
        (regret_strategy(), 1e-4f64..1.0, 1.01f64..5.0, 1e-3f64..0.5),
        |((n, r), delta, headroom, eps)| {
            let mu = adaptive_mu(&r, n, delta, headroom);
            let t = transition_matrix(&r, n, SmoothMaxParams { delta, mu }).unwrap();
            let p = stationary_distribution(&t, n, eps).unwrap();
            let tt = trembled(&t, n, eps);
            let residual = (0..n)
                .map(|j| ((0..n).map(|i| p[i] * tt[i * n + j]).sum::<f64>() - p[j]).abs())
                .fold(0.0, f64::max);
            prop_assert!(residual <= 1e-10, "residual {}", residual);
            let exact = exact_stationary(&tt, n).unwrap();
            for (a, b) in p.iter().zip(&exact) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            Ok(())
        },
    )
}

/// Regret and residual diagonals are exactly zero.
pub fn zero_regret_diagonals() -> Result<(), String> {
    run((any::<u64>(), 1usize..200), |(seed, steps)| {
        let game = Arc::new(random_game(seed, 3, 3, 3));
        let mut run = CnrqRun::new(game.clone(), CnrqConfig::default(), seed).unwrap();
        for _ in 0..steps {
            run.step().unwrap();
            for l in run.learners() {
                let n = l.num_actions;
                for s in 0..game.num_states() {
                    let m = l.regret_matrix(s);
                    prop_assert!((0..n).all(|i| m[i * n + i] == 0.0));
                }
            }
        }
        let q: Vec<QTable> = run.learners().iter().map(|l| l.q.clone()).collect();
        let res = ce_residuals(&run.empirical().policy, game.joint_space(), &q).unwrap();
        for k in 0..game.num_agents() {
            for s in 0..game.num_states() {
                for i in 0..game.joint_space().actions(k) {
                    prop_assert_eq!(res.get(k, s, i, i), 0.0);
                }
            }
        }
        Ok(())
    })
}

/// Multipliers stay in `[0, max]`, both for single updates and along runs.
pub fn lambda_projection() -> Result<(), String> {
    run(
        (
            0.0f64..100.0,
            -50.0f64..50.0,
            -10.0f64..10.0,
            0u64..1_000_000,
            0.01f64..100.0,
            any::<u64>(),
        ),
        |(lambda, cost, bound, n, max, seed)| {
            let lambda = lambda.min(max);
            let next = update_lambda(lambda, cost, bound, n, &StepSchedules::default(), max);
            prop_assert!((0.0..=max).contains(&next));
            let game = Arc::new(random_game(seed, 2, 2, 2));
            let config = CnrqConfig {
                lambda_max: max.min(5.0),
                ..CnrqConfig::default()
            };
            let mut run = CnrqRun::new(game, config, seed).unwrap();
            for _ in 0..50 {
                let t = run.step().unwrap();
                prop_assert!(t.lambdas.iter().all(|l| (0.0..=config.lambda_max).contains(l)));
            }
            Ok(())
        },
    )
}

/// Identical game and seed give identical trajectories and environment draws.
pub fn determinism() -> Result<(), String> {
    run((any::<u64>(), any::<u64>()), |(game_seed, seed)| {
        let game = Arc::new(random_game(game_seed, 3, 3, 3));
        let mut a = CnrqRun::new(game.clone(), CnrqConfig::default(), seed).unwrap();
        let mut b = CnrqRun::new(game.clone(), CnrqConfig::default(), seed).unwrap();
        for _ in 0..100 {
            prop_assert_eq!(a.step().unwrap(), b.step().unwrap());
        }
        prop_assert_eq!(a.learners(), b.learners());
        let mut ra = ChaCha8Rng::seed_from_u64(seed);
        let mut rb = ChaCha8Rng::seed_from_u64(seed);
        let space = game.joint_space();
        for i in 0..100 {
            let joint = space.decode(i % space.size());
            let s = i % game.num_states();
            prop_assert_eq!(game.next_state(s, &joint, &mut ra), game.next_state(s, &joint, &mut rb));
        }
        Ok(())
    })
}

/// The per-slot service term agrees between table units (MHz, ms, bits) and
/// SI base units (Hz, s, bits) to 1e-9 relative.
pub fn unit_consistency() -> Result<(), String> {
    run(
        (
            0.1f64..10.0,
            64.0f64..1e5,
            0.1f64..20.0,
            prop::collection::vec(0.0f64..200.0, 4),
        ),
        |(slot_ms, packet_bits, bandwidth_mhz, powers)| {
            let params = DownlinkParams {
                slot_ms,
                packet_bits,
                bandwidth: bandwidth_mhz,
                ..DownlinkParams::default()
            };
            let rate_mbps = downlink_mbs_rate(&powers, &params);
            let table_units = params.service_packets(rate_mbps);
            let interference: f64 = params.noise_power
                + powers
                    .iter()
                    .zip(&params.fbs_mue_gains)
                    .map(|(p, g)| p * g)
                    .sum::<f64>();
            let bits_per_second = (bandwidth_mhz * 1e6) * (1.0 + params.mbs_power * params.mbs_mue_gain / interference).log2();
            let si = (slot_ms * 1e-3) * bits_per_second / packet_bits;
            prop_assert!(
                (table_units - si).abs() <= 1e-9 * si.abs().max(f64::MIN_POSITIVE),
                "{} vs {}",
                table_units,
                si
            );
            Ok(())
        },
    )
}

/// Every check of the invariant suite, by name.
pub fn invariant_suite() -> Vec<(&'static str, fn() -> Result<(), String>)> {
    vec![
        ("simplex sums", simplex_sums),
        ("row-stochasticity", row_stochasticity),
        ("stationary residual", stationary_residual),
        ("zero regret diagonals", zero_regret_diagonals),
        ("lambda projection", lambda_projection),
        ("determinism", determinism),
        ("service-term unit consistency", unit_consistency),
    ]
}

/// Joint policy with strictly positive random rows.
pub fn random_policy(rng: &mut ChaCha8Rng, states: usize, joint: usize) -> JointPolicy {
    let rows = (0..states)
        .map(|_| {
            let w: Vec<f64> = (0..joint).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
        .collect();
    JointPolicy::from_rows(rows).unwrap()
}
