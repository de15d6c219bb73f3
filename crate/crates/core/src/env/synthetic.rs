//! Small games given by explicit tables, used as oracle fixtures.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::game::{Game, Interval, JointSpace};

/// Explicit tables for a synthetic game.
///
/// `utilities[k][s][a]` and `costs[k][s][a]` are indexed by agent, state and
/// flattened joint action; `transitions[s][a][s']` are probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTables {
    pub name: String,
    pub actions: Vec<usize>,
    pub num_states: usize,
    pub utilities: Vec<Vec<Vec<f64>>>,
    pub costs: Vec<Vec<Vec<f64>>>,
    pub cost_bounds: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticGame {
    name: String,
    space: JointSpace,
    num_states: usize,
    utilities: Vec<f64>,
    costs: Vec<f64>,
    cost_bounds: Vec<f64>,
    transitions: Vec<f64>,
    discount: f64,
    utility_ranges: Vec<Interval>,
    cost_ranges: Vec<Interval>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedTables(msg.into())
}

/// Validates and wraps explicit tables behind [`Game`].
pub fn make_synthetic_game(tables: SyntheticTables) -> Result<SyntheticGame> {
    let space = JointSpace::new(tables.actions.clone()).map_err(|e| malformed(e.to_string()))?;
    let k = space.num_agents();
    let s = tables.num_states;
    let a = space.size();
    if s == 0 {
        return Err(malformed("at least one state is required"));
    }
    if !(0.0..1.0).contains(&tables.discount) {
        return Err(malformed("discount must lie in [0, 1)"));
    }
    if tables.cost_bounds.len() != k {
        return Err(malformed("one cost bound per agent"));
    }
    let flatten = |name: &str, t: &[Vec<Vec<f64>>]| -> Result<Vec<f64>> {
        if t.len() != k || t.iter().any(|per_state| per_state.len() != s || per_state.iter().any(|r| r.len() != a)) {
            return Err(malformed(format!("{name} must be shaped agents x states x joint actions")));
        }
        let flat: Vec<f64> = t.iter().flatten().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(malformed(format!("{name} must be finite")));
        }
        Ok(flat)
    };
    let utilities = flatten("utilities", &tables.utilities)?;
    let costs = flatten("costs", &tables.costs)?;
    if tables.transitions.len() != s || tables.transitions.iter().any(|r| r.len() != a || r.iter().any(|p| p.len() != s)) {
        return Err(malformed("transitions must be shaped states x joint actions x states"));
    }
    for (si, per_state) in tables.transitions.iter().enumerate() {
        for (ai, row) in per_state.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(malformed(format!("transition row ({si}, {ai}) is not a distribution")));
            }
        }
    }
    let transitions: Vec<f64> = tables.transitions.iter().flatten().flatten().copied().collect();
    let range = |flat: &[f64], agent: usize| {
        let chunk = &flat[agent * s * a..(agent + 1) * s * a];
        let lo = chunk.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    };
    let utility_ranges = (0..k).map(|i| range(&utilities, i)).collect();
    let cost_ranges = (0..k).map(|i| range(&costs, i)).collect();
    Ok(SyntheticGame {
        name: tables.name,
        space,
        num_states: s,
        utilities,
        costs,
        cost_bounds: tables.cost_bounds,
        transitions,
        discount: tables.discount,
        utility_ranges,
        cost_ranges,
    })
}

impl SyntheticGame {
    fn offset(&self, agent: usize, state: usize, joint: usize) -> usize {
        (agent * self.num_states + state) * self.space.size() + joint
    }

    pub fn utility_at(&self, agent: usize, state: usize, joint: usize) -> f64 {
        self.utilities[self.offset(agent, state, joint)]
    }

    pub fn cost_at(&self, agent: usize, state: usize, joint: usize) -> f64 {
        self.costs[self.offset(agent, state, joint)]
    }

    pub fn transition_prob(&self, state: usize, joint: usize, next: usize) -> f64 {
        self.transitions[(state * self.space.size() + joint) * self.num_states + next]
    }

    pub fn transition_row(&self, state: usize, joint: usize) -> &[f64] {
        let start = (state * self.space.size() + joint) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }
}

impl Game for SyntheticGame {
    fn name(&self) -> &str {
        &self.name
    }

    fn joint_space(&self) -> &JointSpace {
        &self.space
    }

    fn num_states(&self) -> usize {
        self.num_states
    }

    fn utility(&self, agent: usize, state: usize, joint: &[usize]) -> f64 {
        self.utility_at(agent, state, self.space.index(joint))
    }

    fn cost(&self, agent: usize, state: usize, joint: &[usize]) -> f64 {
        self.cost_at(agent, state, self.space.index(joint))
    }

    fn cost_bound(&self, agent: usize) -> f64 {
        self.cost_bounds[agent]
    }

    fn utility_range(&self, agent: usize) -> Interval {
        self.utility_ranges[agent]
    }

    fn cost_range(&self, agent: usize) -> Interval {
        self.cost_ranges[agent]
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn next_state(&self, state: usize, joint: &[usize], rng: &mut dyn RngCore) -> usize {
        let row = self.transition_row(state, self.space.index(joint));
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (s, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// One agent, two states, two actions.
pub fn single_agent_mdp() -> SyntheticGame {
    make_synthetic_game(SyntheticTables {
        name: "single-agent-mdp".into(),
        actions: vec![2],
        num_states: 2,
        utilities: vec![vec![vec![1.0, 0.0], vec![0.0, 2.0]]],
        costs: vec![vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
        cost_bounds: vec![0.0],
        transitions: vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.5, 0.5], vec![0.3, 0.7]],
        ],
        discount: 0.8,
    })
    .expect("fixture tables are well formed")
}

/// Two agents, two states, two actions each, with action-dependent transitions.
pub fn two_agent_two_state() -> SyntheticGame {
    make_synthetic_game(SyntheticTables {
        name: "two-agent-two-state".into(),
        actions: vec![2, 2],
        num_states: 2,
        utilities: vec![
            vec![vec![2.0, 0.0, 3.0, 1.0], vec![1.0, 4.0, 0.0, 2.0]],
            vec![vec![2.0, 3.0, 0.0, 1.0], vec![0.5, 1.0, 3.0, 0.0]],
        ],
        costs: vec![
            vec![vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 0.0, 1.0, 1.0]],
            vec![vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 1.0]],
        ],
        cost_bounds: vec![0.5, 0.5],
        transitions: vec![
            vec![vec![0.8, 0.2], vec![0.4, 0.6], vec![0.5, 0.5], vec![0.1, 0.9]],
            vec![vec![0.3, 0.7], vec![0.6, 0.4], vec![0.7, 0.3], vec![0.2, 0.8]],
        ],
        discount: 0.7,
    })
    .expect("fixture tables are well formed")
}

/// Repeated one-shot game with explicit bimatrix payoffs (row player first).
pub fn repeated_bimatrix(name: &str, row: [[f64; 2]; 2], col: [[f64; 2]; 2], discount: f64) -> SyntheticGame {
    let flat = |m: [[f64; 2]; 2]| vec![m[0][0], m[0][1], m[1][0], m[1][1]];
    make_synthetic_game(SyntheticTables {
        name: name.into(),
        actions: vec![2, 2],
        num_states: 1,
        utilities: vec![vec![flat(row)], vec![flat(col)]],
        costs: vec![vec![vec![0.0; 4]], vec![vec![0.0; 4]]],
        cost_bounds: vec![0.0, 0.0],
        transitions: vec![vec![vec![1.0]; 4]],
        discount,
    })
    .expect("fixture tables are well formed")
}

/// Prisoner's dilemma; action 0 cooperates, action 1 defects.
pub fn prisoners_dilemma() -> SyntheticGame {
    repeated_bimatrix("prisoners-dilemma", [[3.0, 0.0], [5.0, 1.0]], [[3.0, 5.0], [0.0, 1.0]], 0.0)
}
