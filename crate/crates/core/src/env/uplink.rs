//! Uplink spectrum access: femto users pick a transmit power while a macro
//! user toggles between idle and occupied according to a two-state Markov
//! chain. Utility is the Shannon rate at the femto base station, cost is the
//! transmit power.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Game, Interval, JointSpace};

/// Parameters of the uplink game. The macro-user activity chain defaults to
/// a symmetric sticky chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UplinkParams {
    /// Noise power `N_0` [mW].
    pub noise_power: f64,
    /// Macro-user transmit power `a_0` [mW].
    pub mue_power: f64,
    /// Femto-user power levels [mW], shared by every agent.
    pub fue_power_levels: Vec<f64>,
    /// Macro user to femto base station `k` gains `g_0k`.
    pub mue_fbs_gains: Vec<f64>,
    /// `fue_fbs_gains[i][j]`: gain from femto user `i` to femto base station `j`.
    pub fue_fbs_gains: Vec<Vec<f64>>,
    /// Bandwidth `W` [MHz].
    pub bandwidth: f64,
    /// Mean power constraint per femto user [mW].
    pub power_constraints: Vec<f64>,
    /// Macro-user activity chain over {idle, occupied}.
    pub mue_dtmc: [[f64; 2]; 2],
    pub discount: f64,
}

impl Default for UplinkParams {
    fn default() -> Self {
        Self {
            noise_power: 1e-7,
            mue_power: 5.0,
            fue_power_levels: vec![0.0, 1.0],
            mue_fbs_gains: vec![0.038, 0.082, 0.071, 0.086],
            fue_fbs_gains: vec![
                vec![0.44, 0.10, 0.02, 0.10],
                vec![0.07, 0.23, 0.03, 0.06],
                vec![0.10, 0.10, 0.25, 0.10],
                vec![0.10, 0.05, 0.09, 0.24],
            ],
            bandwidth: 1.0,
            power_constraints: vec![0.75; 4],
            mue_dtmc: [[0.9, 0.1], [0.1, 0.9]],
            discount: 0.9,
        }
    }
}

impl UplinkParams {
    pub fn num_agents(&self) -> usize {
        self.mue_fbs_gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_agents();
        let bad = |m: &str| Err(Error::InvalidArgument(format!("uplink: {m}")));
        if k == 0 {
            return bad("at least one femto user is required");
        }
        if self.fue_fbs_gains.len() != k || self.fue_fbs_gains.iter().any(|r| r.len() != k) {
            return bad("fue_fbs_gains must be K x K");
        }
        if self.power_constraints.len() != k {
            return bad("one power constraint per femto user");
        }
        if self.fue_power_levels.is_empty() {
            return bad("at least one power level is required");
        }
        let gains = self.mue_fbs_gains.iter().chain(self.fue_fbs_gains.iter().flatten());
        if gains.clone().any(|&g| !(g >= 0.0)) || self.fue_power_levels.iter().any(|&p| !(p >= 0.0)) {
            return bad("gains and power levels must be nonnegative");
        }
        if !(self.noise_power > 0.0) || !(self.bandwidth > 0.0) || !(self.mue_power >= 0.0) {
            return bad("noise power and bandwidth must be positive");
        }
        for row in &self.mue_dtmc {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return bad("mue_dtmc rows must be distributions");
            }
        }
        if self.mue_dtmc[0][1] == 0.0 || self.mue_dtmc[1][0] == 0.0 {
            return bad("mue_dtmc must be irreducible");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Shannon rate of femto user `agent` given the macro activity and all powers.
pub fn uplink_utility(agent: usize, mue_state: usize, powers: &[f64], params: &UplinkParams) -> f64 {
    let h = &params.fue_fbs_gains;
    let mut interference = params.noise_power;
    if mue_state == 1 {
        interference += params.mue_fbs_gains[agent] * params.mue_power;
    }
    for (other, &p) in powers.iter().enumerate() {
        if other != agent {
            interference += p * h[other][agent];
        }
    }
    params.bandwidth * (1.0 + powers[agent] * h[agent][agent] / interference).log2()
}

/// Power consumed by `agent`.
pub fn uplink_cost(agent: usize, powers: &[f64]) -> f64 {
    powers[agent]
}

/// Samples the next macro-user activity state.
pub fn mue_transition(state: usize, dtmc: &[[f64; 2]; 2], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    if u < dtmc[state][0] {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone)]
pub struct UplinkGame {
    params: UplinkParams,
    space: JointSpace,
    utility_ranges: Vec<Interval>,
    cost_range: Interval,
}

impl UplinkGame {
    pub fn new(params: UplinkParams) -> Result<Self> {
        params.validate()?;
        let k = params.num_agents();
        let levels = params.fue_power_levels.len();
        let space = JointSpace::new(vec![levels; k])?;
        let max_p = params.fue_power_levels.iter().copied().fold(0.0, f64::max);
        let utility_ranges = (0..k)
            .map(|i| {
                let best = params.bandwidth * (1.0 + max_p * params.fue_fbs_gains[i][i] / params.noise_power).log2();
                Interval::new(0.0, best)
            })
            .collect();
        let min_p = params.fue_power_levels.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            params,
            space,
            utility_ranges,
            cost_range: Interval::new(min_p, max_p),
        })
    }

    pub fn params(&self) -> &UplinkParams {
        &self.params
    }

    pub fn powers(&self, joint: &[usize]) -> Vec<f64> {
        joint.iter().map(|&a| self.params.fue_power_levels[a]).collect()
    }
}

impl Game for UplinkGame {
    fn name(&self) -> &str {
        "uplink"
    }

    fn joint_space(&self) -> &JointSpace {
        &self.space
    }

    fn num_states(&self) -> usize {
        2
    }

    fn utility(&self, agent: usize, state: usize, joint: &[usize]) -> f64 {
        uplink_utility(agent, state, &self.powers(joint), &self.params)
    }

    fn cost(&self, agent: usize, _state: usize, joint: &[usize]) -> f64 {
        self.params.fue_power_levels[joint[agent]]
    }

    fn cost_bound(&self, agent: usize) -> f64 {
        self.params.power_constraints[agent]
    }

    fn utility_range(&self, agent: usize) -> Interval {
        self.utility_ranges[agent]
    }

    fn cost_range(&self, _agent: usize) -> Interval {
        self.cost_range
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn next_state(&self, state: usize, _joint: &[usize], rng: &mut dyn RngCore) -> usize {
        mue_transition(state, &self.params.mue_dtmc, rng)
    }
}
