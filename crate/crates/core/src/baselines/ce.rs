//! The correlated-equilibrium polytope of one stage game and its utilitarian
//! selector.

use crate::error::{Error, Result};
use crate::game::JointSpace;
use crate::lp::LinearProgram;

/// Correlated equilibria of the stage game with payoffs `payoffs[k][a]`,
/// together with a linear objective over joint-action masses.
#[derive(Debug, Clone, PartialEq)]
pub struct CePolytope {
    space: JointSpace,
    payoffs: Vec<Vec<f64>>,
    objective: Vec<f64>,
}

impl CePolytope {
    /// Polytope with the utilitarian objective `sum_k payoffs[k]`.
    pub fn utilitarian(space: &JointSpace, payoffs: &[&[f64]]) -> Result<Self> {
        let objective = (0..space.size())
            .map(|a| payoffs.iter().map(|p| p.get(a).copied().unwrap_or(0.0)).sum())
            .collect();
        Self::with_objective(space, payoffs, objective)
    }

    pub fn with_objective(space: &JointSpace, payoffs: &[&[f64]], objective: Vec<f64>) -> Result<Self> {
        if payoffs.len() != space.num_agents() {
            return Err(Error::DimensionMismatch {
                what: "number of payoff tables",
                expected: space.num_agents(),
                found: payoffs.len(),
            });
        }
        for p in payoffs.iter().map(|p| p.len()).chain(std::iter::once(objective.len())) {
            if p != space.size() {
                return Err(Error::DimensionMismatch {
                    what: "joint actions",
                    expected: space.size(),
                    found: p,
                });
            }
        }
        if payoffs.iter().flat_map(|p| p.iter()).chain(&objective).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("payoffs must be finite".into()));
        }
        Ok(Self {
            space: space.clone(),
            payoffs: payoffs.iter().map(|p| p.to_vec()).collect(),
            objective,
        })
    }

    pub fn space(&self) -> &JointSpace {
        &self.space
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    /// Incentive rows, nonnegativity and the simplex equality.
    pub fn num_constraints(&self) -> usize {
        let incentive: usize = self.space.action_counts().iter().map(|n| n * (n - 1)).sum();
        incentive + self.space.size() + 1
    }

    /// Coefficients of the incentive constraint "agent `k` told `i` does not
    /// gain by playing `j`", as a `<= 0` row over joint-action masses.
    pub fn incentive_row(&self, agent: usize, recommended: usize, deviation: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.space.size()];
        let q = &self.payoffs[agent];
        for o in 0..self.space.opponents_size(agent) {
            let a = self.space.compose(agent, recommended, o);
            row[a] = q[self.space.compose(agent, deviation, o)] - q[a];
        }
        row
    }

    /// The program handed to the simplex. Incentive coefficients below the
    /// rounding noise of the payoffs are zeroed and every row is scaled to
    /// unit max-norm; vacuous rows are dropped.
    pub fn to_linear_program(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.objective.clone());
        for k in 0..self.space.num_agents() {
            let n = self.space.actions(k);
            let noise = 1e-13 * self.payoffs[k].iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let mut row = self.incentive_row(k, i, j);
                    row.iter_mut().filter(|v| v.abs() <= noise).for_each(|v| *v = 0.0);
                    let norm = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if norm > 0.0 {
                        row.iter_mut().for_each(|v| *v /= norm);
                        lp.add_le(row, 0.0);
                    }
                }
            }
        }
        lp.add_eq(vec![1.0; self.space.size()], 1.0);
        lp
    }

    /// Largest incentive-constraint violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.space.num_agents() {
            let n = self.space.actions(k);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let v: f64 = self.incentive_row(k, i, j).iter().zip(x).map(|(a, b)| a * b).sum();
                    worst = worst.max(v);
                }
            }
        }
        worst
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Optimal correlated equilibrium of `polytope` as a distribution over joint
/// actions.
pub fn lp_solve(polytope: &CePolytope) -> Result<Vec<f64>> {
    let solution = polytope.to_linear_program().solve()?;
    let mut x = solution.x;
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Infeasible);
    }
    x.iter_mut().for_each(|v| *v /= total);
    Ok(x)
}

/// Correlated equilibrium maximizing the sum of the agents' payoffs.
pub fn utilitarian_ce(space: &JointSpace, payoffs: &[&[f64]]) -> Result<Vec<f64>> {
    lp_solve(&CePolytope::utilitarian(space, payoffs)?)
}
