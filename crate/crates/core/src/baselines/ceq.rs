//! CE-Q learning with a utilitarian equilibrium selector, augmented with
//! per-agent Lagrange multipliers.
//!
//! The centralized variant solves one shared linear program per step and
//! lets a referee draw the joint recommendation. In the semi-distributed
//! variant every agent keeps its own model of all Q-tables, fed by its own
//! (optionally noisy) observations of the others' rewards, solves its own
//! program and acts on its own marginal.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::ce::utilitarian_ce;
use crate::baselines::regret_matching::empirical_policy;
use crate::cnrq::{lyapunov_of_residuals, update_lambda};
use crate::error::{Error, Result};
use crate::game::{ce_residuals, lagrangian, max_positive_regret, Game, QTable};
use crate::learner::{Diagnostics, MultiAgentLearner, Transition};
use crate::schedule::StepSchedules;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeqVariant {
    Centralized,
    SemiDistributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CeqConfig {
    pub schedules: StepSchedules,
    /// Probability of replacing the recommended action by a uniform one.
    pub epsilon: f64,
    pub lambda_max: f64,
    /// Standard deviation of the Gaussian noise each agent adds to the other
    /// agents' rewards before updating its models (semi-distributed only).
    pub observation_noise: f64,
    /// Smoothing width used by the Lyapunov diagnostic.
    pub delta: f64,
}

impl Default for CeqConfig {
    fn default() -> Self {
        Self {
            schedules: StepSchedules::default(),
            epsilon: 0.05,
            lambda_max: 100.0,
            observation_noise: 0.0,
            delta: 1e-3,
        }
    }
}

impl CeqConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedules.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1]".into()));
        }
        if !(self.lambda_max > 0.0) || !(self.observation_noise >= 0.0) || !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(
                "lambda_max and delta must be positive, observation noise nonnegative".into(),
            ));
        }
        Ok(())
    }
}

// One agent's view: models of every agent's Q-table and pair counters.
#[derive(Debug, Clone)]
struct Model {
    q: Vec<QTable>,
    visits: Vec<u64>,
}

pub struct CeqRun {
    game: Arc<dyn Game>,
    variant: CeqVariant,
    config: CeqConfig,
    // one model for the centralized variant, one per agent otherwise
    models: Vec<Model>,
    lambdas: Vec<f64>,
    counts: Vec<Vec<f64>>,
    actions: Vec<usize>,
    state: usize,
    iteration: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl CeqRun {
    pub fn new(game: Arc<dyn Game>, variant: CeqVariant, config: CeqConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = game.joint_space().clone();
        let (ns, na, k) = (game.num_states(), space.size(), space.num_agents());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = (0..k).map(|i| rng.gen_range(0..space.actions(i))).collect();
        let model = Model {
            q: vec![QTable::zeros(ns, na); k],
            visits: vec![0; ns * na],
        };
        let copies = match variant {
            CeqVariant::Centralized => 1,
            CeqVariant::SemiDistributed => k,
        };
        let noise = match variant {
            CeqVariant::SemiDistributed if config.observation_noise > 0.0 => {
                Some(Normal::new(0.0, config.observation_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            }
            _ => None,
        };
        Ok(Self {
            counts: vec![vec![0.0; na]; ns],
            state: game.initial_state(),
            models: vec![model; copies],
            lambdas: vec![0.0; k],
            game,
            variant,
            config,
            actions,
            iteration: 0,
            rng,
            noise,
        })
    }

    pub fn variant(&self) -> CeqVariant {
        self.variant
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Q-tables as seen by `viewer` (ignored by the centralized variant).
    pub fn q_tables(&self, viewer: usize) -> &[QTable] {
        match self.variant {
            CeqVariant::Centralized => &self.models[0].q,
            CeqVariant::SemiDistributed => &self.models[viewer].q,
        }
    }

    fn select(&self, model: &Model, state: usize) -> Result<Vec<f64>> {
        let slices: Vec<&[f64]> = model.q.iter().map(|q| q.row(state)).collect();
        utilitarian_ce(self.game.joint_space(), &slices)
    }
}

// Inverse-CDF draw from `p` with the uniform `u`.
fn sample(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

impl MultiAgentLearner for CeqRun {
    fn game(&self) -> &dyn Game {
        self.game.as_ref()
    }

    fn current_state(&self) -> usize {
        self.state
    }

    fn step(&mut self) -> Result<Transition> {
        let game = Arc::clone(&self.game);
        let space = game.joint_space();
        let k_count = space.num_agents();
        let schedules = self.config.schedules;
        let rho = game.discount();
        let s = self.state;
        let joint = self.actions.clone();
        let a = space.index(&joint);
        self.counts[s][a] += 1.0;

        // 1-4: play, observe every reward and the next state
        let next = game.next_state(s, &joint, &mut self.rng);
        let utilities: Vec<f64> = (0..k_count).map(|k| game.utility(k, s, &joint)).collect();
        let costs: Vec<f64> = (0..k_count).map(|k| game.cost(k, s, &joint)).collect();
        let rewards: Vec<f64> = (0..k_count)
            .map(|k| lagrangian(utilities[k], costs[k], game.cost_bound(k), self.lambdas[k]))
            .collect();

        // 5-6: select an equilibrium at the next state, back up its value
        let mut selections = Vec::with_capacity(self.models.len());
        for viewer in 0..self.models.len() {
            let pi = self.select(&self.models[viewer], next)?;
            let observed: Vec<f64> = match self.noise {
                Some(noise) => (0..k_count)
                    .map(|k| if k == viewer { rewards[k] } else { rewards[k] + noise.sample(&mut self.rng) })
                    .collect(),
                None => rewards.clone(),
            };
            let model = &mut self.models[viewer];
            let alpha = schedules.alpha(model.visits[s * space.size() + a]);
            model.visits[s * space.size() + a] += 1;
            for (k, q) in model.q.iter_mut().enumerate() {
                let v: f64 = pi.iter().zip(q.row(next)).map(|(p, v)| p * v).sum();
                let old = q.get(s, a);
                q.set(s, a, old + alpha * ((1.0 - rho) * observed[k] + rho * v - old));
            }
            selections.push(pi);
        }

        // multipliers on the slow timescale
        for k in 0..k_count {
            self.lambdas[k] = update_lambda(
                self.lambdas[k],
                costs[k],
                game.cost_bound(k),
                self.iteration,
                &schedules,
                self.config.lambda_max,
            );
        }

        // 7: off-policy action at the next state. Both variants draw one
        // uniform per agent for the recommendation, so their randomness
        // stays aligned whenever the selections agree.
        let eps = self.config.epsilon;
        let draws: Vec<f64> = (0..k_count).map(|_| self.rng.gen()).collect();
        let recommended: Vec<usize> = match self.variant {
            CeqVariant::Centralized => space.decode(sample(&selections[0], draws[0])),
            CeqVariant::SemiDistributed => (0..k_count)
                .map(|k| {
                    let mut marginal = vec![0.0; space.actions(k)];
                    for (b, &p) in selections[k].iter().enumerate() {
                        marginal[space.action_of(b, k)] += p;
                    }
                    sample(&marginal, draws[k])
                })
                .collect(),
        };
        for k in 0..k_count {
            self.actions[k] = if self.rng.gen::<f64>() < eps {
                self.rng.gen_range(0..space.actions(k))
            } else {
                recommended[k]
            };
        }
        let miscoordinated = match self.variant {
            CeqVariant::Centralized => None,
            CeqVariant::SemiDistributed => {
                let first = &selections[0];
                Some(
                    selections[1..]
                        .iter()
                        .any(|other| other.iter().zip(first).any(|(x, y)| (x - y).abs() > 1e-9)),
                )
            }
        };
        self.iteration += 1;
        self.state = next;
        Ok(Transition {
            iteration: self.iteration,
            state: s,
            joint,
            next_state: next,
            utilities,
            costs,
            lambdas: self.lambdas.clone(),
            miscoordinated,
        })
    }

    fn diagnostics(&self) -> Result<Diagnostics> {
        let q: Vec<QTable> = (0..self.game.num_agents())
            .map(|k| self.q_tables(k)[k].clone())
            .collect();
        let residuals = ce_residuals(&empirical_policy(&self.counts), self.game.joint_space(), &q)?;
        Ok(Diagnostics {
            max_positive_residual: max_positive_regret(&residuals),
            lyapunov: lyapunov_of_residuals(&residuals, self.config.delta),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::synthetic::{repeated_bimatrix, single_agent_mdp};
    use crate::oracle::{value_iteration, ExplicitModel};

    #[test]
    fn single_agent_reduces_to_q_learning() {
        let g = single_agent_mdp();
        let (_, _, q_star) = value_iteration(&ExplicitModel::from_synthetic(&g, &[0.0]).unwrap()).unwrap();
        let mut run = CeqRun::new(
            Arc::new(g),
            CeqVariant::Centralized,
            CeqConfig {
                epsilon: 0.3,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        for _ in 0..200_000 {
            run.step().unwrap();
        }
        let gap = run.q_tables(0)[0].sup_distance(&q_star);
        assert!(gap < 1e-2, "gap {gap}");
    }

    #[test]
    fn noiseless_semi_matches_centralized_on_unique_equilibrium() {
        let g: Arc<dyn Game> = Arc::new(repeated_bimatrix("pd", [[3.0, 0.0], [5.0, 1.0]], [[3.0, 5.0], [0.0, 1.0]], 0.5));
        let mut c = CeqRun::new(g.clone(), CeqVariant::Centralized, CeqConfig::default(), 3).unwrap();
        let mut d = CeqRun::new(g, CeqVariant::SemiDistributed, CeqConfig::default(), 3).unwrap();
        for _ in 0..500 {
            let (tc, td) = (c.step().unwrap(), d.step().unwrap());
            assert_eq!(td.miscoordinated, Some(false));
            assert_eq!((tc.state, tc.joint), (td.state, td.joint));
        }
        assert_eq!(c.q_tables(0)[1], d.q_tables(1)[1]);
    }

    #[test]
    fn multipliers_stay_projected() {
        let g: Arc<dyn Game> = Arc::new(single_agent_mdp());
        let mut run = CeqRun::new(g, CeqVariant::Centralized, CeqConfig { lambda_max: 0.5, ..Default::default() }, 1).unwrap();
        for _ in 0..1000 {
            let t = run.step().unwrap();
            assert!(t.lambdas.iter().all(|&l| (0.0..=0.5).contains(&l)));
        }
    }
}
