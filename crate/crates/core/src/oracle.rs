//! Exact solvers for small instances: policy evaluation, value iteration,
//! correlated-equilibrium vertex enumeration and stationary distributions.
//!
//! These back the property and acceptance tests, so they favour direct linear
//! algebra over speed.

use nalgebra::{DMatrix, DVector};

use crate::baselines::CePolytope;
use crate::env::SyntheticGame;
use crate::error::{Error, Result};
use crate::game::{lagrangian, Game, JointPolicy, JointSpace, QTable};

/// Largest joint-action space accepted by [`ce_vertex_enumerate`].
pub const VERTEX_ENUMERATION_CAP: usize = 16;
/// Largest number of candidate bases [`ce_vertex_enumerate`] will try.
pub const BASIS_CAP: usize = 5_000_000;

/// Full transition tensor and expected stage Lagrangians of a finite game.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitModel {
    num_states: usize,
    num_joint: usize,
    // [s][a][s']
    transitions: Vec<f64>,
    // per agent: [s][a]
    lagrangians: Vec<Vec<f64>>,
    discount: f64,
}

impl ExplicitModel {
    pub fn new(
        num_states: usize,
        num_joint: usize,
        transitions: Vec<f64>,
        lagrangians: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        if transitions.len() != num_states * num_joint * num_states {
            return Err(Error::DimensionMismatch {
                what: "transition tensor",
                expected: num_states * num_joint * num_states,
                found: transitions.len(),
            });
        }
        for l in &lagrangians {
            if l.len() != num_states * num_joint {
                return Err(Error::DimensionMismatch {
                    what: "Lagrangian table",
                    expected: num_states * num_joint,
                    found: l.len(),
                });
            }
        }
        for row in transitions.chunks(num_states) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::MalformedTables("transition rows must be distributions".into()));
            }
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidArgument("discount must lie in [0, 1)".into()));
        }
        Ok(Self {
            num_states,
            num_joint,
            transitions,
            lagrangians,
            discount,
        })
    }

    /// Model of a synthetic game with the multipliers frozen at `lambdas`.
    pub fn from_synthetic(game: &SyntheticGame, lambdas: &[f64]) -> Result<Self> {
        let space = game.joint_space();
        if lambdas.len() != space.num_agents() {
            return Err(Error::DimensionMismatch {
                what: "multipliers",
                expected: space.num_agents(),
                found: lambdas.len(),
            });
        }
        let (ns, na) = (game.num_states(), space.size());
        let mut transitions = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                transitions.extend_from_slice(game.transition_row(s, a));
            }
        }
        let lagrangians = lambdas
            .iter()
            .enumerate()
            .map(|(k, &lambda)| {
                (0..ns)
                    .flat_map(|s| (0..na).map(move |a| (s, a)))
                    .map(|(s, a)| lagrangian(game.utility_at(k, s, a), game.cost_at(k, s, a), game.cost_bound(k), lambda))
                    .collect()
            })
            .collect();
        Self::new(ns, na, transitions, lagrangians, game.discount())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    pub fn num_agents(&self) -> usize {
        self.lagrangians.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_joint + a) * self.num_states + next]
    }

    pub fn stage_lagrangian(&self, agent: usize, s: usize, a: usize) -> f64 {
        self.lagrangians[agent][s * self.num_joint + a]
    }

    fn q_from_values(&self, agent: usize, values: &[f64]) -> QTable {
        let rho = self.discount;
        let rows = (0..self.num_states)
            .map(|s| {
                (0..self.num_joint)
                    .map(|a| {
                        let future: f64 = (0..self.num_states).map(|t| self.transition(s, a, t) * values[t]).sum();
                        (1.0 - rho) * self.stage_lagrangian(agent, s, a) + rho * future
                    })
                    .collect()
            })
            .collect();
        QTable::from_rows(rows).expect("rows have equal length")
    }
}

/// Values `L` and action values `Q` of `agent` under a fixed joint policy:
/// `Q(s,a) = (1 - rho) l(s,a) + rho sum_s' P(s'|s,a) L(s')`, `L(s) = sum_a pi_s(a) Q(s,a)`.
pub fn exact_policy_evaluation(model: &ExplicitModel, policy: &JointPolicy, agent: usize) -> Result<(Vec<f64>, QTable)> {
    let (ns, na) = (model.num_states, model.num_joint);
    if policy.num_states() != ns || policy.num_joint() != na {
        return Err(Error::DimensionMismatch {
            what: "policy shape",
            expected: ns * na,
            found: policy.num_states() * policy.num_joint(),
        });
    }
    if agent >= model.num_agents() {
        return Err(Error::InvalidArgument(format!("agent {agent} out of range")));
    }
    let rho = model.discount;
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut rhs = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for (a, &p) in policy.row(s).iter().enumerate() {
            rhs[s] += p * (1.0 - rho) * model.stage_lagrangian(agent, s, a);
            for t in 0..ns {
                m[(s, t)] -= rho * p * model.transition(s, a, t);
            }
        }
    }
    let values = m
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("policy evaluation"))?;
    let values: Vec<f64> = values.iter().copied().collect();
    let q = model.q_from_values(agent, &values);
    Ok((values, q))
}

/// Optimal values, greedy actions and action values of a single-agent model
/// by value iteration to sup-norm tolerance `1e-12`.
pub fn value_iteration(model: &ExplicitModel) -> Result<(Vec<f64>, Vec<usize>, QTable)> {
    if model.num_agents() != 1 {
        return Err(Error::InvalidArgument("value iteration needs a single agent".into()));
    }
    let mut values = vec![0.0; model.num_states];
    loop {
        let q = model.q_from_values(0, &values);
        let next: Vec<f64> = (0..model.num_states)
            .map(|s| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let gap = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        values = next;
        if gap <= 1e-12 {
            break;
        }
    }
    let q = model.q_from_values(0, &values);
    let greedy = (0..model.num_states)
        .map(|s| {
            q.row(s)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (a, &v)| if v > best.1 { (a, v) } else { best })
                .0
        })
        .collect();
    Ok((values, greedy, q))
}

/// All vertices of the correlated-equilibrium polytope of a normal-form game
/// with `payoffs[k][a]`, by solving every candidate basis.
pub fn ce_vertex_enumerate(space: &JointSpace, payoffs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let n = space.size();
    if n > VERTEX_ENUMERATION_CAP {
        return Err(Error::TooLarge {
            size: n,
            cap: VERTEX_ENUMERATION_CAP,
        });
    }
    let polytope = CePolytope::utilitarian(space, payoffs)?;
    // Inequalities g.x <= 0: incentive rows, then -x_a <= 0.
    let mut ineq: Vec<Vec<f64>> = Vec::new();
    for k in 0..space.num_agents() {
        let m = space.actions(k);
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                ineq.push(polytope.incentive_row(k, i, j));
            }
        }
    }
    for a in 0..n {
        let mut row = vec![0.0; n];
        row[a] = -1.0;
        ineq.push(row);
    }
    let choose = n - 1;
    let bases = binomial(ineq.len(), choose);
    if bases > BASIS_CAP {
        return Err(Error::TooLarge { size: bases, cap: BASIS_CAP });
    }
    let mut search = BasisSearch::new(n, &ineq);
    search.descend(0, 1);
    Ok(search.vertices)
}

// Depth-first search over sets of active inequalities, kept in echelon
// form so that a dependent prefix prunes its whole subtree. The simplex
// equality is always the first row.
struct BasisSearch<'a> {
    n: usize,
    ineq: &'a [Vec<f64>],
    rows: Vec<f64>,
    rhs: Vec<f64>,
    pivots: Vec<usize>,
    vertices: Vec<Vec<f64>>,
}

impl<'a> BasisSearch<'a> {
    fn new(n: usize, ineq: &'a [Vec<f64>]) -> Self {
        let mut search = Self {
            n,
            ineq,
            rows: vec![0.0; n * n],
            rhs: vec![0.0; n],
            pivots: vec![0; n],
            vertices: Vec::new(),
        };
        search.rows[..n].fill(1.0);
        search.rhs[0] = 1.0;
        search.pivots[0] = 0;
        search
    }

    // Reduces `candidate` against rows `0..depth` into row `depth`; false if
    // it is dependent on them.
    fn push(&mut self, depth: usize, candidate: &[f64], rhs: f64) -> bool {
        let n = self.n;
        let (done, rest) = self.rows.split_at_mut(depth * n);
        let row = &mut rest[..n];
        row.copy_from_slice(candidate);
        let mut b = rhs;
        for d in 0..depth {
            let prev = &done[d * n..(d + 1) * n];
            let p = self.pivots[d];
            let f = row[p] / prev[p];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(prev) {
                    *x -= f * y;
                }
                row[p] = 0.0;
                b -= f * self.rhs[d];
            }
        }
        let (pivot, size) = row
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (c, v)| if v.abs() > best.1 { (c, v.abs()) } else { best });
        let scale = candidate.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if size <= 1e-10 * scale {
            return false;
        }
        self.pivots[depth] = pivot;
        self.rhs[depth] = b;
        true
    }

    fn descend(&mut self, start: usize, depth: usize) {
        let n = self.n;
        if depth == n {
            self.leaf();
            return;
        }
        let remaining = n - depth;
        for i in start..=self.ineq.len() - remaining {
            let ineq = self.ineq;
            if self.push(depth, &ineq[i], 0.0) {
                self.descend(i + 1, depth + 1);
            }
        }
    }

    fn leaf(&mut self) {
        let n = self.n;
        let mut x = vec![0.0; n];
        for d in (0..n).rev() {
            let row = &self.rows[d * n..(d + 1) * n];
            let p = self.pivots[d];
            let mut acc = self.rhs[d];
            for (c, v) in row.iter().enumerate() {
                if c != p {
                    acc -= v * x[c];
                }
            }
            x[p] = acc / row[p];
        }
        let feasible = self
            .ineq
            .iter()
            .all(|g| g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() <= 1e-9);
        if feasible && !self.vertices.iter().any(|v| v.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-9)) {
            self.vertices.push(x);
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Invariant measure of an irreducible stochastic matrix (row-major `n x n`)
/// from `(I - T^T + 1 1^T) p = 1`.
pub fn exact_stationary(t: &[f64], n: usize) -> Result<Vec<f64>> {
    if t.len() != n * n {
        return Err(Error::DimensionMismatch {
            what: "stochastic matrix",
            expected: n * n,
            found: t.len(),
        });
    }
    if !irreducible(t, n) {
        return Err(Error::Reducible);
    }
    let m = DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } - t[c * n + r] + 1.0);
    let p = m
        .full_piv_lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or(Error::SingularSystem("stationary distribution"))?;
    Ok(p.iter().copied().collect())
}

fn irreducible(t: &[f64], n: usize) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { t[i * n + j] } else { t[j * n + i] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    reach(true) && reach(false)
}
