//! Nested-loop learning: Q-learning in the outer loop and, at every step, a
//! fresh round of virtual regret-matching play on the current Q estimates.
//! Costs and multipliers are ignored.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::regret_matching::{empirical_policy, play_distribution, update_average_regret, RegretMatchingConfig};
use crate::cnrq::{lyapunov_of_residuals, select_action};
use crate::error::{Error, Result};
use crate::game::{ce_residuals, max_positive_regret, Game, QTable};
use crate::learner::{Diagnostics, MultiAgentLearner, Transition};
use crate::schedule::StepSchedules;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QnrConfig {
    pub schedules: StepSchedules,
    /// Virtual regret-matching rounds per outer step.
    pub inner_iterations: usize,
    /// Exploration mixed into the averaged inner-loop distribution.
    pub epsilon: f64,
    pub inner: RegretMatchingConfig,
}

impl Default for QnrConfig {
    fn default() -> Self {
        Self {
            schedules: StepSchedules::default(),
            inner_iterations: 200,
            epsilon: 0.05,
            inner: RegretMatchingConfig::default(),
        }
    }
}

impl QnrConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedules.validate()?;
        self.inner.validate()?;
        if self.inner_iterations == 0 {
            return Err(Error::InvalidArgument("at least one inner iteration is required".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub struct QnrRun {
    game: Arc<dyn Game>,
    config: QnrConfig,
    q: Vec<QTable>,
    visits: Vec<u64>,
    counts: Vec<Vec<f64>>,
    actions: Vec<usize>,
    last_average: Vec<Vec<f64>>,
    state: usize,
    iteration: u64,
    rng: ChaCha8Rng,
}

impl QnrRun {
    pub fn new(game: Arc<dyn Game>, config: QnrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = game.joint_space().clone();
        let (ns, na, k) = (game.num_states(), space.size(), space.num_agents());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = (0..k).map(|i| rng.gen_range(0..space.actions(i))).collect();
        Ok(Self {
            q: vec![QTable::zeros(ns, na); k],
            visits: vec![0; ns * na],
            counts: vec![vec![0.0; na]; ns],
            last_average: (0..k).map(|i| vec![1.0 / space.actions(i) as f64; space.actions(i)]).collect(),
            state: game.initial_state(),
            game,
            config,
            actions,
            iteration: 0,
            rng,
        })
    }

    pub fn q_tables(&self) -> &[QTable] {
        &self.q
    }

    /// Averaged inner-loop distributions from the latest outer step.
    pub fn average_distributions(&self) -> &[Vec<f64>] {
        &self.last_average
    }

    // Virtual regret matching among all agents with `Q(state, .)` as payoffs.
    fn inner_loop(&mut self, state: usize) -> Result<Vec<Vec<f64>>> {
        let space = self.game.joint_space().clone();
        let k_count = space.num_agents();
        let mut regrets: Vec<Vec<f64>> = (0..k_count).map(|k| vec![0.0; space.actions(k).pow(2)]).collect();
        let mut average: Vec<Vec<f64>> = (0..k_count).map(|k| vec![0.0; space.actions(k)]).collect();
        let mut virtual_joint: Vec<usize> = (0..k_count).map(|k| self.rng.gen_range(0..space.actions(k))).collect();
        for m in 0..self.config.inner_iterations {
            let a = space.index(&virtual_joint);
            let step = 1.0 / (m + 1) as f64;
            let mut next_joint = virtual_joint.clone();
            for k in 0..k_count {
                let q = self.q[k].row(state);
                let n = space.actions(k);
                update_average_regret(&mut regrets[k], n, virtual_joint[k], step, |j| q[space.with_action(a, k, j)] - q[a]);
                let p = play_distribution(&regrets[k], n, &self.config.inner)?;
                for (avg, pi) in average[k].iter_mut().zip(&p) {
                    *avg += (pi - *avg) * step;
                }
                next_joint[k] = select_action(&p, 0.0, &mut self.rng);
            }
            virtual_joint = next_joint;
        }
        Ok(average)
    }
}

impl MultiAgentLearner for QnrRun {
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
        let rho = game.discount();
        let s = self.state;
        let joint = self.actions.clone();
        let a = space.index(&joint);

        // 1-3: play, empirical frequency, rewards and next state
        self.counts[s][a] += 1.0;
        let next = game.next_state(s, &joint, &mut self.rng);
        let utilities: Vec<f64> = (0..k_count).map(|k| game.utility(k, s, &joint)).collect();
        let costs: Vec<f64> = (0..k_count).map(|k| game.cost(k, s, &joint)).collect();

        // 4-5: value of the next state under the empirical play, Q update
        let pi = empirical_policy(&self.counts[next..=next]);
        let alpha = self.config.schedules.alpha(self.visits[s * space.size() + a]);
        self.visits[s * space.size() + a] += 1;
        for (k, q) in self.q.iter_mut().enumerate() {
            let v: f64 = pi.row(0).iter().zip(q.row(next)).map(|(p, v)| p * v).sum();
            let old = q.get(s, a);
            q.set(s, a, old + alpha * ((1.0 - rho) * utilities[k] + rho * v - old));
        }

        // 6-7: inner loop at the state where the next action is played
        let average = self.inner_loop(next)?;
        for (k, p) in average.iter().enumerate() {
            self.actions[k] = select_action(p, self.config.epsilon, &mut self.rng);
        }
        self.last_average = average;
        self.iteration += 1;
        self.state = next;
        Ok(Transition {
            iteration: self.iteration,
            state: s,
            joint,
            next_state: next,
            utilities,
            lambdas: vec![0.0; costs.len()],
            costs,
            miscoordinated: None,
        })
    }

    fn diagnostics(&self) -> Result<Diagnostics> {
        let residuals = ce_residuals(&empirical_policy(&self.counts), self.game.joint_space(), &self.q)?;
        Ok(Diagnostics {
            max_positive_residual: max_positive_regret(&residuals),
            lyapunov: lyapunov_of_residuals(&residuals, self.config.inner.delta),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::synthetic::{make_synthetic_game, SyntheticTables};

    fn one_state_one_agent() -> Arc<dyn Game> {
        Arc::new(
            make_synthetic_game(SyntheticTables {
                name: "bandit".into(),
                actions: vec![2],
                num_states: 1,
                utilities: vec![vec![vec![1.0, 3.0]]],
                costs: vec![vec![vec![0.0, 0.0]]],
                cost_bounds: vec![0.0],
                transitions: vec![vec![vec![1.0], vec![1.0]]],
                discount: 0.0,
            })
            .unwrap(),
        )
    }

    #[test]
    fn single_agent_learns_myopic_values() {
        let mut run = QnrRun::new(one_state_one_agent(), QnrConfig { inner_iterations: 20, epsilon: 0.3, ..Default::default() }, 2).unwrap();
        for _ in 0..20_000 {
            run.step().unwrap();
        }
        let q = &run.q_tables()[0];
        assert!((q.get(0, 0) - 1.0).abs() < 1e-2);
        assert!((q.get(0, 1) - 3.0).abs() < 1e-2);
    }

    #[test]
    fn one_inner_round_gives_distributions() {
        let mut run = QnrRun::new(one_state_one_agent(), QnrConfig { inner_iterations: 1, ..Default::default() }, 7).unwrap();
        for _ in 0..100 {
            run.step().unwrap();
            for p in run.average_distributions() {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&x| x >= 0.0));
            }
        }
    }
}
