//! Constrained stochastic games, joint policies and correlated-equilibrium residuals.
//!
//! Joint actions are flattened row-major over `(a_1, ..., a_K)`: the last
//! agent's action varies fastest. Every table in the crate that is indexed by a
//! joint action (Q-tables, policies, payoff tables) uses this layout.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` declared by an environment for its payoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Largest absolute value attained on the interval.
    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// Index arithmetic for the joint action space `A = A_1 x ... x A_K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSpace {
    counts: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointSpace {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("a game needs at least one agent".into()));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument("every agent needs at least one action".into()));
        }
        let mut strides = vec![1; counts.len()];
        for k in (0..counts.len() - 1).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let size = strides[0] * counts[0];
        Ok(Self { counts, strides, size })
    }

    pub fn num_agents(&self) -> usize {
        self.counts.len()
    }

    /// Number of joint actions `|A|`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of actions `|A_k|` of one agent.
    pub fn actions(&self, agent: usize) -> usize {
        self.counts[agent]
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of opponents' joint profiles `|A_{-k}|`.
    pub fn opponents_size(&self, agent: usize) -> usize {
        self.size / self.counts[agent]
    }

    pub fn index(&self, joint: &[usize]) -> usize {
        debug_assert_eq!(joint.len(), self.counts.len());
        joint.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.counts.len()];
        self.decode_into(index, &mut out);
        out
    }

    pub fn decode_into(&self, index: usize, out: &mut [usize]) {
        for k in 0..self.counts.len() {
            out[k] = (index / self.strides[k]) % self.counts[k];
        }
    }

    pub fn action_of(&self, index: usize, agent: usize) -> usize {
        (index / self.strides[agent]) % self.counts[agent]
    }

    /// Joint index obtained by replacing `agent`'s component with `action`.
    pub fn with_action(&self, index: usize, agent: usize, action: usize) -> usize {
        let current = self.action_of(index, agent);
        index - current * self.strides[agent] + action * self.strides[agent]
    }

    /// Row-major index of the opponents' profile `a_{-k}` inside `A_{-k}`.
    pub fn opponent_index(&self, index: usize, agent: usize) -> usize {
        let stride = self.strides[agent];
        let high = index / (stride * self.counts[agent]);
        let low = index % stride;
        high * stride + low
    }

    /// Joint index of `(action, a_{-k})` given an opponents' profile index.
    pub fn compose(&self, agent: usize, action: usize, opponents: usize) -> usize {
        let stride = self.strides[agent];
        let high = opponents / stride;
        let low = opponents % stride;
        high * stride * self.counts[agent] + action * stride + low
    }
}

/// Environment contract for a discounted constrained stochastic game.
///
/// Implementations must keep utilities and costs inside their declared
/// intervals and must be deterministic given the randomness source.
pub trait Game: Send + Sync {
    fn name(&self) -> &str;

    fn joint_space(&self) -> &JointSpace;

    fn num_states(&self) -> usize;

    fn num_agents(&self) -> usize {
        self.joint_space().num_agents()
    }

    fn utility(&self, agent: usize, state: usize, joint: &[usize]) -> f64;

    fn cost(&self, agent: usize, state: usize, joint: &[usize]) -> f64;

    /// Constraint level `D_k` on the discounted cost of `agent`.
    fn cost_bound(&self, agent: usize) -> f64;

    fn utility_range(&self, agent: usize) -> Interval;

    fn cost_range(&self, agent: usize) -> Interval;

    /// Discount factor `rho` in `[0, 1)`.
    fn discount(&self) -> f64;

    fn initial_state(&self) -> usize {
        0
    }

    fn next_state(&self, state: usize, joint: &[usize], rng: &mut dyn RngCore) -> usize;
}

/// Per-state distribution over joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    num_states: usize,
    num_joint: usize,
    probs: Vec<f64>,
}

impl JointPolicy {
    /// All-zero policy, the initialization used by the learners before a
    /// state is first visited.
    pub fn zeros(num_states: usize, num_joint: usize) -> Self {
        Self {
            num_states,
            num_joint,
            probs: vec![0.0; num_states * num_joint],
        }
    }

    pub fn uniform(num_states: usize, num_joint: usize) -> Self {
        Self {
            num_states,
            num_joint,
            probs: vec![1.0 / num_joint as f64; num_states * num_joint],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_joint = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(num_states * num_joint);
        for row in rows {
            if row.len() != num_joint {
                return Err(Error::DimensionMismatch {
                    what: "policy row",
                    expected: num_joint,
                    found: row.len(),
                });
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidArgument("policy entries must be nonnegative".into()));
            }
            probs.extend(row);
        }
        Ok(Self {
            num_states,
            num_joint,
            probs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_joint..(state + 1) * self.num_joint]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        &mut self.probs[state * self.num_joint..(state + 1) * self.num_joint]
    }

    /// Rescales every state's row onto the simplex; all-zero rows are left as is.
    pub fn normalize(&mut self) {
        for s in 0..self.num_states {
            let row = self.row_mut(s);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|p| *p /= total);
            }
        }
    }
}

/// One agent's action-value table over `(state, joint action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_joint: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_joint: usize) -> Self {
        Self {
            num_states,
            num_joint,
            values: vec![0.0; num_states * num_joint],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_joint = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(num_states * num_joint);
        for row in rows {
            if row.len() != num_joint {
                return Err(Error::DimensionMismatch {
                    what: "Q-table row",
                    expected: num_joint,
                    found: row.len(),
                });
            }
            values.extend(row);
        }
        Ok(Self {
            num_states,
            num_joint,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    pub fn get(&self, state: usize, joint: usize) -> f64 {
        self.values[state * self.num_joint + joint]
    }

    pub fn set(&mut self, state: usize, joint: usize, value: f64) {
        self.values[state * self.num_joint + joint] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_joint..(state + 1) * self.num_joint]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            num_states: self.num_states,
            num_joint: self.num_joint,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Correlated-equilibrium residuals in joint-mass form.
///
/// `residual(k, s, i, j) = sum_{a_-k} pi_s(i, a_-k) * (Q_k(s, j, a_-k) - Q_k(s, i, a_-k))`.
/// The policy is a correlated equilibrium for the given Q-tables iff every
/// entry is `<= 0`. Dividing by the marginal `pi_s(i)` gives the conditional
/// form of the same inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct CeResiduals {
    num_states: usize,
    actions: Vec<usize>,
    // per agent: [state][i][j]
    values: Vec<Vec<f64>>,
    // per agent: [state][i]
    marginals: Vec<Vec<f64>>,
}

impl CeResiduals {
    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn get(&self, agent: usize, state: usize, recommended: usize, deviation: usize) -> f64 {
        let n = self.actions[agent];
        self.values[agent][(state * n + recommended) * n + deviation]
    }

    /// Residual divided by the recommended action's marginal; 0 when the
    /// marginal vanishes.
    pub fn conditional(&self, agent: usize, state: usize, recommended: usize, deviation: usize) -> f64 {
        let n = self.actions[agent];
        let m = self.marginals[agent][state * n + recommended];
        if m > 0.0 {
            self.get(agent, state, recommended, deviation) / m
        } else {
            0.0
        }
    }

    /// The `|A_k| x |A_k|` residual matrix of one agent at one state, row-major.
    pub fn matrix(&self, agent: usize, state: usize) -> &[f64] {
        let n = self.actions[agent];
        &self.values[agent][state * n * n..(state + 1) * n * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flat_map(|v| v.iter().copied())
    }
}

/// Posterior over the opponents' profile given a recommendation to `agent`.
pub fn conditional_policy(
    policy: &JointPolicy,
    space: &JointSpace,
    state: usize,
    agent: usize,
    recommended: usize,
) -> Result<Vec<f64>> {
    check_policy(policy, space)?;
    let row = policy.row(state);
    let opp = space.opponents_size(agent);
    let mut out: Vec<f64> = (0..opp)
        .map(|o| row[space.compose(agent, recommended, o)])
        .collect();
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMarginal {
            state,
            agent,
            action: recommended,
        });
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Residuals of the correlated-equilibrium inequalities for `policy` against
/// per-agent Q-tables.
pub fn ce_residuals(policy: &JointPolicy, space: &JointSpace, q_tables: &[QTable]) -> Result<CeResiduals> {
    check_policy(policy, space)?;
    if q_tables.len() != space.num_agents() {
        return Err(Error::DimensionMismatch {
            what: "number of Q-tables",
            expected: space.num_agents(),
            found: q_tables.len(),
        });
    }
    for q in q_tables {
        if q.num_joint() != space.size() {
            return Err(Error::DimensionMismatch {
                what: "Q-table joint actions",
                expected: space.size(),
                found: q.num_joint(),
            });
        }
        if q.num_states() != policy.num_states() {
            return Err(Error::DimensionMismatch {
                what: "Q-table states",
                expected: policy.num_states(),
                found: q.num_states(),
            });
        }
    }
    let num_states = policy.num_states();
    let mut values = Vec::with_capacity(space.num_agents());
    let mut marginals = Vec::with_capacity(space.num_agents());
    for (k, q) in q_tables.iter().enumerate() {
        let n = space.actions(k);
        let mut res = vec![0.0; num_states * n * n];
        let mut marg = vec![0.0; num_states * n];
        for s in 0..num_states {
            let row = policy.row(s);
            let qs = q.row(s);
            for (a, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let i = space.action_of(a, k);
                marg[s * n + i] += p;
                let base = qs[a];
                for j in 0..n {
                    if j != i {
                        res[(s * n + i) * n + j] += p * (qs[space.with_action(a, k, j)] - base);
                    }
                }
            }
        }
        values.push(res);
        marginals.push(marg);
    }
    Ok(CeResiduals {
        num_states,
        actions: space.action_counts().to_vec(),
        values,
        marginals,
    })
}

/// `max(0, max entry)` over all residuals.
pub fn max_positive_regret(residuals: &CeResiduals) -> f64 {
    residuals.iter().fold(0.0, f64::max)
}

/// `u - lambda * (c - bound)`.
pub fn lagrangian(utility: f64, cost: f64, bound: f64, lambda: f64) -> f64 {
    utility - lambda * (cost - bound)
}

/// Instantaneous Lagrangian of `agent` at `(state, joint)`.
pub fn instantaneous_lagrangian(
    game: &dyn Game,
    agent: usize,
    lambda: f64,
    state: usize,
    joint: &[usize],
) -> Result<f64> {
    if agent >= game.num_agents() {
        return Err(Error::InvalidArgument(format!("agent {agent} out of range")));
    }
    if state >= game.num_states() {
        return Err(Error::InvalidArgument(format!("state {state} out of range")));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    Ok(lagrangian(
        game.utility(agent, state, joint),
        game.cost(agent, state, joint),
        game.cost_bound(agent),
        lambda,
    ))
}

fn check_policy(policy: &JointPolicy, space: &JointSpace) -> Result<()> {
    if policy.num_joint() != space.size() {
        return Err(Error::DimensionMismatch {
            what: "policy joint actions",
            expected: space.size(),
            found: policy.num_joint(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_by_two() -> JointSpace {
        JointSpace::new(vec![2, 2]).unwrap()
    }

    #[test]
    fn joint_indexing_is_row_major() {
        let space = JointSpace::new(vec![2, 3, 2]).unwrap();
        assert_eq!(space.size(), 12);
        assert_eq!(space.index(&[1, 2, 1]), 1 * 6 + 2 * 2 + 1);
        assert_eq!(space.decode(11), vec![1, 2, 1]);
        for a in 0..space.size() {
            for k in 0..3 {
                let o = space.opponent_index(a, k);
                assert_eq!(space.compose(k, space.action_of(a, k), o), a);
            }
        }
        assert_eq!(space.with_action(space.index(&[0, 1, 1]), 1, 2), space.index(&[0, 2, 1]));
    }

    #[test]
    fn conditional_policy_uniform() {
        let p = JointPolicy::uniform(1, 4);
        let c = conditional_policy(&p, &two_by_two(), 0, 0, 0).unwrap();
        assert_eq!(c, vec![0.5, 0.5]);
    }

    #[test]
    fn conditional_policy_point_mass() {
        let p = JointPolicy::from_rows(vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let c = conditional_policy(&p, &two_by_two(), 0, 0, 0).unwrap();
        assert_eq!(c, vec![1.0, 0.0]);
    }

    #[test]
    fn conditional_policy_arithmetic() {
        let p = JointPolicy::from_rows(vec![vec![0.2, 0.3, 0.25, 0.25]]).unwrap();
        let c = conditional_policy(&p, &two_by_two(), 0, 0, 0).unwrap();
        assert_abs_diff_eq!(c[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn conditional_policy_zero_marginal() {
        let p = JointPolicy::from_rows(vec![vec![0.0, 0.0, 0.5, 0.5]]).unwrap();
        let err = conditional_policy(&p, &two_by_two(), 0, 0, 0).unwrap_err();
        assert!(matches!(err, Error::ZeroMarginal { action: 0, .. }));
    }

    // Prisoner's dilemma, action 0 = cooperate, 1 = defect.
    fn pd_q() -> Vec<QTable> {
        vec![
            QTable::from_rows(vec![vec![3.0, 0.0, 5.0, 1.0]]).unwrap(),
            QTable::from_rows(vec![vec![3.0, 5.0, 0.0, 1.0]]).unwrap(),
        ]
    }

    #[test]
    fn residuals_single_action_game_vanish() {
        let space = JointSpace::new(vec![1, 1]).unwrap();
        let p = JointPolicy::uniform(2, 1);
        let q = vec![QTable::zeros(2, 1), QTable::zeros(2, 1)];
        let r = ce_residuals(&p, &space, &q).unwrap();
        assert_eq!(max_positive_regret(&r), 0.0);
        assert!(r.iter().all(|x| x == 0.0));
    }

    #[test]
    fn mutual_defection_is_a_ce() {
        // Deviations from (D, D): to C gives 0 - 1 = -1 for either agent.
        let p = JointPolicy::from_rows(vec![vec![0.0, 0.0, 0.0, 1.0]]).unwrap();
        let r = ce_residuals(&p, &two_by_two(), &pd_q()).unwrap();
        assert!(r.iter().all(|x| x <= 0.0));
        assert_eq!(r.get(0, 0, 1, 0), -1.0);
        assert_eq!(r.get(1, 0, 1, 0), -1.0);
        assert_eq!(max_positive_regret(&r), 0.0);
    }

    #[test]
    fn mutual_cooperation_is_not_a_ce() {
        // Defecting against C gains 5 - 3 = 2.
        let p = JointPolicy::from_rows(vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let r = ce_residuals(&p, &two_by_two(), &pd_q()).unwrap();
        assert_eq!(r.get(0, 0, 0, 1), 2.0);
        assert_eq!(r.get(1, 0, 0, 1), 2.0);
        assert_eq!(max_positive_regret(&r), 2.0);
    }

    #[test]
    fn residual_diagonal_is_zero() {
        let p = JointPolicy::uniform(1, 4);
        let r = ce_residuals(&p, &two_by_two(), &pd_q()).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                assert_eq!(r.get(k, 0, i, i), 0.0);
            }
        }
        // Conditional form divides by the 1/2 marginal.
        assert_abs_diff_eq!(r.conditional(0, 0, 0, 1), 2.0 * r.get(0, 0, 0, 1), epsilon = 1e-15);
    }

    #[test]
    fn residuals_reject_shape_mismatch() {
        let p = JointPolicy::uniform(1, 4);
        let q = vec![QTable::zeros(1, 3), QTable::zeros(1, 3)];
        assert!(matches!(
            ce_residuals(&p, &two_by_two(), &q),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lagrangian_arithmetic() {
        assert_eq!(lagrangian(2.0, 1.5, 0.75, 0.0), 2.0);
        assert_eq!(lagrangian(2.0, 0.75, 0.75, 7.0), 2.0);
        assert_abs_diff_eq!(lagrangian(2.0, 1.5, 0.75, 0.5), 1.625, epsilon = 1e-15);
    }

    #[test]
    fn max_positive_regret_cases() {
        let space = JointSpace::new(vec![2]).unwrap();
        let q = vec![QTable::from_rows(vec![vec![0.0, 0.3]]).unwrap()];
        let p = JointPolicy::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let r = ce_residuals(&p, &space, &q).unwrap();
        assert_abs_diff_eq!(max_positive_regret(&r), 0.3, epsilon = 1e-15);
    }
}
