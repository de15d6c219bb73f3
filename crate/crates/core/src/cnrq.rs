//! Constrained no-regret Q-learning.
//!
//! Each agent runs three coupled recursions on separate timescales:
//!
//! * fast: the empirical frequency of joint play and a per-state regret matrix,
//! * middle: asynchronous Q-learning on the agent's Lagrangian,
//! * slow: projected subgradient descent on the agent's Lagrange multiplier.
//!
//! Actions are drawn from the invariant measure of an epsilon-trembled
//! regret-driven transition matrix. All agents observe the same joint play, so
//! the empirical policy is stored once per run.

use std::sync::Arc;

use log::warn;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ce_residuals, lagrangian, max_positive_regret, CeResiduals, Game, JointPolicy, JointSpace, QTable};
use crate::learner::{Diagnostics, MultiAgentLearner, Transition};
use crate::schedule::StepSchedules;

/// Continuously differentiable surrogate for `max(x, 0)`.
///
/// Exact outside `(-delta, delta)`, bridged by `(x + delta)^2 / (4 delta)` inside.
pub fn smooth_max(x: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    if x >= delta {
        x
    } else if x <= -delta {
        0.0
    } else {
        (x + delta) * (x + delta) / (4.0 * delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothMaxParams {
    pub delta: f64,
    pub mu: f64,
}

/// How the inertia constant `mu` is chosen for the transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InertiaPolicy {
    /// `mu = headroom * max_i sum_{j != i} Y(R(i, j))`, recomputed for every
    /// matrix (1 when all regrets vanish). `headroom > 1` keeps the diagonal
    /// at least `1 - 1/headroom`.
    Adaptive { headroom: f64 },
    /// `mu = 2 |A_k| max|l| / (1 - rho)` from the environment's declared
    /// payoff intervals and the multiplier cap; doubled once if it proves too
    /// small.
    EnvironmentBound,
    /// A fixed constant.
    Fixed { mu: f64 },
}

impl Default for InertiaPolicy {
    fn default() -> Self {
        InertiaPolicy::Adaptive { headroom: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnrqConfig {
    pub schedules: StepSchedules,
    /// Width of the smoothing neighbourhood of `Y`.
    pub delta: f64,
    /// Tremble mixed into the transition matrix.
    pub epsilon: f64,
    /// Upper end of the multiplier projection interval.
    pub lambda_max: f64,
    pub inertia: InertiaPolicy,
}

impl Default for CnrqConfig {
    fn default() -> Self {
        Self {
            schedules: StepSchedules::default(),
            delta: 1e-3,
            epsilon: 0.05,
            lambda_max: 100.0,
            inertia: InertiaPolicy::default(),
        }
    }
}

impl CnrqConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedules.validate()?;
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
        }
        if !(self.lambda_max > 0.0) {
            return Err(Error::InvalidArgument("lambda_max must be positive".into()));
        }
        match self.inertia {
            InertiaPolicy::Adaptive { headroom } if !(headroom > 1.0) => {
                Err(Error::InvalidArgument("inertia headroom must exceed 1".into()))
            }
            InertiaPolicy::Fixed { mu } if !(mu > 0.0) => {
                Err(Error::InvalidArgument("inertia constant must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Empirical frequency of joint play, one row per state, with visit counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    pub policy: JointPolicy,
    pub visits: Vec<u64>,
}

impl Empirical {
    pub fn new(num_states: usize, num_joint: usize) -> Self {
        Self {
            policy: JointPolicy::zeros(num_states, num_joint),
            visits: vec![0; num_states],
        }
    }
}

/// Moves `pi_s` toward the unit vector of the played joint action at the
/// visited state only, then increments the visit counter. Returns the step
/// size used, which the regret update of the same iteration reuses.
pub fn update_empirical(empirical: &mut Empirical, state: usize, joint: usize, schedules: &StepSchedules) -> f64 {
    let gamma = schedules.gamma(empirical.visits[state]);
    let row = empirical.policy.row_mut(state);
    for (a, p) in row.iter_mut().enumerate() {
        let target = if a == joint { 1.0 } else { 0.0 };
        *p += gamma * (target - *p);
    }
    empirical.visits[state] += 1;
    gamma
}

/// `sum_a pi_{s'}(a) Q(s', a)`; zero for a never-visited state.
pub fn long_term_lagrangian(next_state: usize, empirical: &JointPolicy, q: &QTable) -> f64 {
    empirical
        .row(next_state)
        .iter()
        .zip(q.row(next_state))
        .map(|(p, v)| p * v)
        .sum()
}

/// Projection of `lambda + beta(n) (c - bound)` onto `[0, max]`.
pub fn update_lambda(
    lambda: f64,
    cost: f64,
    bound: f64,
    iteration: u64,
    schedules: &StepSchedules,
    max: f64,
) -> f64 {
    (lambda + schedules.beta(iteration) * (cost - bound)).clamp(0.0, max)
}

/// Row-stochastic regret-driven transition matrix (row-major, `n x n`).
pub fn transition_matrix(regret: &[f64], n: usize, params: SmoothMaxParams) -> Result<Vec<f64>> {
    debug_assert_eq!(regret.len(), n * n);
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                let v = smooth_max(regret[i * n + j], params.delta) / params.mu;
                t[i * n + j] = v;
                off += v;
            }
        }
        let diagonal = 1.0 - off;
        if !(diagonal > 0.0) {
            return Err(Error::InertiaTooSmall {
                mu: params.mu,
                row: i,
                diagonal,
            });
        }
        t[i * n + i] = diagonal;
    }
    Ok(t)
}

/// Invariant measure of `(1 - eps) T + eps/n`, found by a direct solve of the
/// balance equations with the normalization row appended.
pub fn stationary_distribution(t: &[f64], n: usize, epsilon: f64) -> Result<Vec<f64>> {
    debug_assert_eq!(t.len(), n * n);
    let uniform = epsilon / n as f64;
    // Row r of the system is column r of (T~ - I); the last row is all ones.
    let mut m = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for r in 0..n - 1 {
        for c in 0..n {
            let trembled = (1.0 - epsilon) * t[c * n + r] + uniform;
            m[r * n + c] = trembled - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..n {
        m[(n - 1) * n + c] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let mut p = gauss_solve(&mut m, &mut rhs, n).ok_or(Error::SingularSystem("balance equations"))?;
    for x in p.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

// Gaussian elimination with partial pivoting; consumes its inputs.
fn gauss_solve(m: &mut [f64], rhs: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(pivot * n + c, col * n + c);
            }
            rhs.swap(pivot, col);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[r * n + c] * x[c];
        }
        x[r] = acc / m[r * n + r];
    }
    Some(x)
}

/// Samples from `(1 - eps) p + eps/n`.
pub fn select_action<R: RngCore + ?Sized>(p: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let n = p.len();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        acc += (1.0 - epsilon) * pa + epsilon / n as f64;
        if u < acc {
            return a;
        }
    }
    // Rounding left `acc` a hair below 1; return the last action with mass.
    p.iter()
        .rposition(|&pa| (1.0 - epsilon) * pa + epsilon / n as f64 > 0.0)
        .unwrap_or(n - 1)
}

/// `1/2 * sum_{i != j} Y(R(i, j))^2` over the given stack of `n x n` matrices.
pub fn lyapunov_value(regrets: &[f64], n: usize, delta: f64) -> f64 {
    regrets
        .chunks(n * n)
        .map(|m| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let y = smooth_max(m[i * n + j], delta);
                        acc += y * y;
                    }
                }
            }
            0.5 * acc
        })
        .sum()
}

/// Lyapunov value of the closed-form regrets `sum_{a: a_k = i} pi_s(a) (Q(j, a_-k) - Q(i, a_-k))`,
/// which coincide with the CE residuals in joint-mass form.
pub fn lyapunov_of_residuals(residuals: &CeResiduals, delta: f64) -> f64 {
    (0..residuals.num_agents())
        .map(|k| {
            (0..residuals.num_states())
                .map(|s| {
                    let m = residuals.matrix(k, s);
                    let n = (m.len() as f64).sqrt().round() as usize;
                    lyapunov_value(m, n, delta)
                })
                .sum::<f64>()
        })
        .sum()
}

/// One agent's learning state.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub agent: usize,
    pub num_actions: usize,
    pub q: QTable,
    /// Per state an `n x n` row-major regret matrix.
    pub regret: Vec<f64>,
    pub lambda: f64,
    pub pair_visits: Vec<u64>,
    pub last_action: usize,
    mu_doubled: bool,
}

impl LearnerState {
    pub fn new(agent: usize, num_actions: usize, num_states: usize, num_joint: usize) -> Self {
        Self {
            agent,
            num_actions,
            q: QTable::zeros(num_states, num_joint),
            regret: vec![0.0; num_states * num_actions * num_actions],
            lambda: 0.0,
            pair_visits: vec![0; num_states * num_joint],
            last_action: 0,
            mu_doubled: false,
        }
    }

    pub fn regret_matrix(&self, state: usize) -> &[f64] {
        let nn = self.num_actions * self.num_actions;
        &self.regret[state * nn..(state + 1) * nn]
    }

    /// Asynchronous Q-learning step at the visited pair:
    /// `Q += alpha(v) [(1 - rho) l + rho L' - Q]`.
    pub fn update_q(&mut self, state: usize, joint: usize, ell: f64, l_next: f64, schedules: &StepSchedules, rho: f64) {
        let idx = state * self.q.num_joint() + joint;
        let alpha = schedules.alpha(self.pair_visits[idx]);
        let q = self.q.get(state, joint);
        self.q.set(state, joint, q + alpha * ((1.0 - rho) * ell + rho * l_next - q));
        self.pair_visits[idx] += 1;
    }

    /// Regret update at the visited state with step `gamma`: row `played`
    /// moves toward the Q-differential, every other row decays toward zero.
    pub fn update_regret(&mut self, space: &JointSpace, state: usize, joint: usize, gamma: f64) {
        let n = self.num_actions;
        let k = self.agent;
        let played = space.action_of(joint, k);
        let q_row = self.q.row(state);
        let base = q_row[joint];
        let m = &mut self.regret[state * n * n..(state + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let target = if i == played {
                    q_row[space.with_action(joint, k, j)] - base
                } else {
                    0.0
                };
                m[i * n + j] += gamma * (target - m[i * n + j]);
            }
        }
    }
}

/// A complete CNRQ run: all learners, the shared empirical policy, the
/// environment and the run's own randomness.
pub struct CnrqRun {
    game: Arc<dyn Game>,
    config: CnrqConfig,
    learners: Vec<LearnerState>,
    empirical: Empirical,
    state: usize,
    iteration: u64,
    rng: ChaCha8Rng,
    lagrangian_bounds: Vec<f64>,
}

impl CnrqRun {
    pub fn new(game: Arc<dyn Game>, config: CnrqConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = game.joint_space().clone();
        let num_states = game.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let learners = (0..space.num_agents())
            .map(|k| {
                let mut l = LearnerState::new(k, space.actions(k), num_states, space.size());
                l.last_action = rng.gen_range(0..space.actions(k));
                l
            })
            .collect();
        let lagrangian_bounds = (0..space.num_agents())
            .map(|k| {
                let c = game.cost_range(k);
                let d = game.cost_bound(k);
                game.utility_range(k).max_abs() + config.lambda_max * (c.lo - d).abs().max((c.hi - d).abs())
            })
            .collect();
        Ok(Self {
            state: game.initial_state(),
            empirical: Empirical::new(num_states, space.size()),
            game,
            config,
            learners,
            iteration: 0,
            rng,
            lagrangian_bounds,
        })
    }

    pub fn learners(&self) -> &[LearnerState] {
        &self.learners
    }

    pub fn empirical(&self) -> &Empirical {
        &self.empirical
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Bound on `|l_k|` implied by the declared intervals and the multiplier cap.
    pub fn lagrangian_bound(&self, agent: usize) -> f64 {
        self.lagrangian_bounds[agent]
    }

    fn inertia_for(&self, agent: usize, regret: &[f64]) -> f64 {
        let n = self.learners[agent].num_actions;
        match self.config.inertia {
            InertiaPolicy::Fixed { mu } => mu,
            InertiaPolicy::EnvironmentBound => {
                let base = 2.0 * n as f64 * self.lagrangian_bounds[agent] / (1.0 - self.game.discount());
                if self.learners[agent].mu_doubled {
                    2.0 * base
                } else {
                    base
                }
            }
            InertiaPolicy::Adaptive { headroom } => {
                let delta = self.config.delta;
                let worst = (0..n)
                    .map(|i| {
                        (0..n)
                            .filter(|&j| j != i)
                            .map(|j| smooth_max(regret[i * n + j], delta))
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max);
                if worst > 0.0 {
                    headroom * worst
                } else {
                    1.0
                }
            }
        }
    }

    /// Play distribution of `agent` at `state` from its current regrets.
    pub fn play_distribution(&mut self, agent: usize, state: usize) -> Result<Vec<f64>> {
        let n = self.learners[agent].num_actions;
        let regret = self.learners[agent].regret_matrix(state).to_vec();
        let mu = self.inertia_for(agent, &regret);
        let params = SmoothMaxParams {
            delta: self.config.delta,
            mu,
        };
        let t = match transition_matrix(&regret, n, params) {
            Ok(t) => t,
            Err(Error::InertiaTooSmall { .. })
                if self.config.inertia == InertiaPolicy::EnvironmentBound && !self.learners[agent].mu_doubled =>
            {
                warn!("agent {agent}: inertia constant {mu} too small, doubling");
                self.learners[agent].mu_doubled = true;
                transition_matrix(&regret, n, SmoothMaxParams { mu: 2.0 * mu, ..params })?
            }
            Err(e) => return Err(e),
        };
        stationary_distribution(&t, n, self.config.epsilon)
    }
}

impl MultiAgentLearner for CnrqRun {
    fn game(&self) -> &dyn Game {
        self.game.as_ref()
    }

    fn current_state(&self) -> usize {
        self.state
    }

    fn step(&mut self) -> Result<Transition> {
        let game = Arc::clone(&self.game);
        let space = game.joint_space();
        let schedules = self.config.schedules;
        let rho = game.discount();
        let s = self.state;
        let joint: Vec<usize> = self.learners.iter().map(|l| l.last_action).collect();
        let a = space.index(&joint);

        // 1: empirical frequency
        let gamma = update_empirical(&mut self.empirical, s, a, &schedules);
        // 2: observe payoffs and the next state
        let next = game.next_state(s, &joint, &mut self.rng);
        let k_count = self.learners.len();
        let mut utilities = Vec::with_capacity(k_count);
        let mut costs = Vec::with_capacity(k_count);
        let mut lambdas = Vec::with_capacity(k_count);
        for learner in self.learners.iter_mut() {
            let k = learner.agent;
            let u = game.utility(k, s, &joint);
            let c = game.cost(k, s, &joint);
            let bound = game.cost_bound(k);
            let ell = lagrangian(u, c, bound, learner.lambda);
            // 3-4: Q-learning on the Lagrangian with the pre-update multiplier
            let l_next = long_term_lagrangian(next, &self.empirical.policy, &learner.q);
            learner.update_q(s, a, ell, l_next, &schedules, rho);
            // 5: dual step
            learner.lambda = update_lambda(learner.lambda, c, bound, self.iteration, &schedules, self.config.lambda_max);
            // 6: regrets at the visited state
            learner.update_regret(space, s, a, gamma);
            utilities.push(u);
            costs.push(c);
            lambdas.push(learner.lambda);
        }
        // 7-8: transition matrix, invariant measure and action for the next state
        for k in 0..k_count {
            let p = self.play_distribution(k, next)?;
            self.learners[k].last_action = select_action(&p, 0.0, &mut self.rng);
        }
        self.iteration += 1;
        self.state = next;
        Ok(Transition {
            iteration: self.iteration,
            state: s,
            joint,
            next_state: next,
            utilities,
            costs,
            lambdas,
            miscoordinated: None,
        })
    }

    fn diagnostics(&self) -> Result<Diagnostics> {
        let q: Vec<QTable> = self.learners.iter().map(|l| l.q.clone()).collect();
        let residuals = ce_residuals(&self.empirical.policy, self.game.joint_space(), &q)?;
        let lyapunov = self
            .learners
            .iter()
            .map(|l| lyapunov_value(&l.regret, l.num_actions, self.config.delta))
            .sum();
        Ok(Diagnostics {
            max_positive_residual: max_positive_regret(&residuals),
            lyapunov,
        })
    }
}
