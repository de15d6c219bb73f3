//! Regret matching for repeated normal-form games, with play drawn from the
//! invariant measure of the regret-driven transition matrix.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnrq::{select_action, smooth_max, stationary_distribution, transition_matrix, SmoothMaxParams};
use crate::error::{Error, Result};
use crate::game::{ce_residuals, max_positive_regret, Game, JointPolicy, QTable};
use crate::learner::{Diagnostics, MultiAgentLearner, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegretMatchingConfig {
    /// Smoothing width of the positive part.
    pub delta: f64,
    /// Tremble mixed into the transition matrix.
    pub epsilon: f64,
    /// `mu = headroom * (largest row sum of positive regret)`, or 1 when
    /// every regret is nonpositive.
    pub headroom: f64,
}

impl Default for RegretMatchingConfig {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            epsilon: 0.01,
            headroom: 2.0,
        }
    }
}

impl RegretMatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.headroom > 1.0) {
            return Err(Error::InvalidArgument(
                "regret matching needs delta > 0, epsilon in (0, 1) and headroom > 1".into(),
            ));
        }
        Ok(())
    }
}

/// One player's regret state in a repeated normal-form game.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormLearner {
    pub agent: usize,
    pub num_actions: usize,
    /// `n x n` row-major average regret: entry `(i, j)` is the average gain
    /// from having played `j` whenever `i` was played.
    pub regret: Vec<f64>,
    pub plays: u64,
    pub last_action: usize,
}

impl NormalFormLearner {
    pub fn new(agent: usize, num_actions: usize) -> Self {
        Self {
            agent,
            num_actions,
            regret: vec![0.0; num_actions * num_actions],
            plays: 0,
            last_action: 0,
        }
    }

    /// Largest smoothed positive regret.
    pub fn max_positive_regret(&self, delta: f64) -> f64 {
        let n = self.num_actions;
        (0..n * n)
            .filter(|&e| e / n != e % n)
            .map(|e| smooth_max(self.regret[e], delta))
            .fold(0.0, f64::max)
    }

    /// Play distribution from the current regrets.
    pub fn play_distribution(&self, config: &RegretMatchingConfig) -> Result<Vec<f64>> {
        play_distribution(&self.regret, self.num_actions, config)
    }
}

/// Moving-average regret step with weight `step`: row `played` moves toward
/// `gain(j)`, every other row toward zero. The diagonal stays zero.
pub fn update_average_regret(regret: &mut [f64], n: usize, played: usize, step: f64, mut gain: impl FnMut(usize) -> f64) {
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let target = if i == played { gain(j) } else { 0.0 };
            regret[i * n + j] += step * (target - regret[i * n + j]);
        }
    }
}

/// Invariant measure of the trembled transition matrix built from `regret`.
pub fn play_distribution(regret: &[f64], n: usize, config: &RegretMatchingConfig) -> Result<Vec<f64>> {
    let worst = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| smooth_max(regret[i * n + j], config.delta))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let mu = if worst > 0.0 { config.headroom * worst } else { 1.0 };
    let t = transition_matrix(regret, n, SmoothMaxParams { delta: config.delta, mu })?;
    stationary_distribution(&t, n, config.epsilon)
}

/// Records the joint action just played, updates the regrets with step
/// `1 / n`, and draws the learner's next action.
///
/// `payoff` gives the learner's payoff for any joint action.
pub fn regret_matching_step<R: RngCore + ?Sized>(
    learner: &mut NormalFormLearner,
    payoff: &dyn Fn(&[usize]) -> f64,
    joint: &[usize],
    config: &RegretMatchingConfig,
    rng: &mut R,
) -> Result<usize> {
    let k = learner.agent;
    let played = joint[k];
    let realized = payoff(joint);
    let mut deviation = joint.to_vec();
    learner.plays += 1;
    let step = 1.0 / learner.plays as f64;
    let n = learner.num_actions;
    update_average_regret(&mut learner.regret, n, played, step, |j| {
        deviation[k] = j;
        payoff(&deviation) - realized
    });
    let p = learner.play_distribution(config)?;
    learner.last_action = select_action(&p, 0.0, rng);
    Ok(learner.last_action)
}

/// Every agent runs regret matching on its stage utility, one learner per
/// state. Multipliers are not learned.
pub struct RegretMatchingRun {
    game: Arc<dyn Game>,
    config: RegretMatchingConfig,
    // [state][agent]
    learners: Vec<Vec<NormalFormLearner>>,
    counts: Vec<Vec<f64>>,
    actions: Vec<usize>,
    state: usize,
    iteration: u64,
    rng: ChaCha8Rng,
}

impl RegretMatchingRun {
    pub fn new(game: Arc<dyn Game>, config: RegretMatchingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = game.joint_space().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = (0..space.num_agents()).map(|k| rng.gen_range(0..space.actions(k))).collect();
        let learners = (0..game.num_states())
            .map(|_| (0..space.num_agents()).map(|k| NormalFormLearner::new(k, space.actions(k))).collect())
            .collect();
        Ok(Self {
            counts: vec![vec![0.0; space.size()]; game.num_states()],
            state: game.initial_state(),
            game,
            config,
            learners,
            actions,
            iteration: 0,
            rng,
        })
    }

    pub fn learners(&self, state: usize) -> &[NormalFormLearner] {
        &self.learners[state]
    }

    /// Empirical frequency of joint play per state; unvisited states are uniform.
    pub fn empirical(&self) -> JointPolicy {
        empirical_policy(&self.counts)
    }
}

pub(crate) fn empirical_policy(counts: &[Vec<f64>]) -> JointPolicy {
    let rows = counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|c| c / total).collect()
            } else {
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect();
    JointPolicy::from_rows(rows).expect("rows share the joint-action count")
}

impl MultiAgentLearner for RegretMatchingRun {
    fn game(&self) -> &dyn Game {
        self.game.as_ref()
    }

    fn current_state(&self) -> usize {
        self.state
    }

    fn step(&mut self) -> Result<Transition> {
        let game = Arc::clone(&self.game);
        let s = self.state;
        let joint = self.actions.clone();
        self.counts[s][game.joint_space().index(&joint)] += 1.0;
        let next = game.next_state(s, &joint, &mut self.rng);
        let utilities: Vec<f64> = (0..joint.len()).map(|k| game.utility(k, s, &joint)).collect();
        let costs: Vec<f64> = (0..joint.len()).map(|k| game.cost(k, s, &joint)).collect();
        for k in 0..joint.len() {
            let payoff = |a: &[usize]| game.utility(k, s, a);
            let learner = &mut self.learners[s][k];
            let played = joint[k];
            let realized = utilities[k];
            learner.plays += 1;
            let step = 1.0 / learner.plays as f64;
            let mut deviation = joint.clone();
            update_average_regret(&mut learner.regret, learner.num_actions, played, step, |j| {
                deviation[k] = j;
                payoff(&deviation) - realized
            });
        }
        for k in 0..joint.len() {
            let p = self.learners[next][k].play_distribution(&self.config)?;
            self.actions[k] = select_action(&p, 0.0, &mut self.rng);
        }
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
        let game = self.game.as_ref();
        let space = game.joint_space();
        let q: Vec<QTable> = (0..space.num_agents())
            .map(|k| {
                let rows = (0..game.num_states())
                    .map(|s| (0..space.size()).map(|a| game.utility(k, s, &space.decode(a))).collect())
                    .collect();
                QTable::from_rows(rows)
            })
            .collect::<Result<_>>()?;
        let residuals = ce_residuals(&self.empirical(), space, &q)?;
        let lyapunov = self
            .learners
            .iter()
            .flatten()
            .map(|l| crate::cnrq::lyapunov_value(&l.regret, l.num_actions, self.config.delta))
            .sum();
        Ok(Diagnostics {
            max_positive_residual: max_positive_regret(&residuals),
            lyapunov,
        })
    }
}
