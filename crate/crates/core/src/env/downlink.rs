//! Downlink power control: femto base stations pick transmit powers that
//! interfere with the macro link, whose rate drains the macro base station's
//! packet buffer. The buffer length is the state and the shared cost.

use rand::RngCore;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Game, Interval, JointSpace};

/// Parameters of the downlink game. The macro link gain `g_00`, the noise
/// power and the buffer capacity default to 0.01, 1e-7 mW and 20 packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownlinkParams {
    /// Noise power `N_0` [mW].
    pub noise_power: f64,
    /// Macro base station transmit power `a_0` [mW].
    pub mbs_power: f64,
    /// Femto base station power levels [mW].
    pub fbs_power_levels: Vec<f64>,
    /// Macro base station to femto user `k` gains `g_0k`.
    pub mbs_fue_gains: Vec<f64>,
    /// Femto base station `k` to macro user gains `g_k0`.
    pub fbs_mue_gains: Vec<f64>,
    /// Macro base station to macro user gain `g_00`.
    pub mbs_mue_gain: f64,
    /// `fbs_fue_gains[i][j]`: gain from femto base station `i` to femto user `j`.
    pub fbs_fue_gains: Vec<Vec<f64>>,
    /// Slot duration `tau` [ms].
    pub slot_ms: f64,
    /// Mean Poisson packet arrivals per millisecond.
    pub arrival_rate: f64,
    /// Packet length `L` [bits] (256 bytes).
    pub packet_bits: f64,
    /// Buffer capacity `N_B` [packets].
    pub buffer_cap: usize,
    /// Mean buffer length constraint [packets].
    pub buffer_constraint: f64,
    /// Bandwidth `W` [MHz].
    pub bandwidth: f64,
    pub discount: f64,
}

impl Default for DownlinkParams {
    fn default() -> Self {
        Self {
            noise_power: 1e-7,
            mbs_power: 500.0,
            fbs_power_levels: vec![0.0, 10.0, 100.0],
            mbs_fue_gains: vec![0.003, 0.005, 0.008, 0.002],
            fbs_mue_gains: vec![0.055, 0.051, 0.035, 0.012],
            mbs_mue_gain: 0.01,
            fbs_fue_gains: vec![
                vec![0.68, 0.09, 0.03, 0.04],
                vec![0.07, 0.82, 0.04, 0.04],
                vec![0.01, 0.04, 0.16, 0.03],
                vec![0.03, 0.08, 0.01, 0.29],
            ],
            slot_ms: 1.0,
            arrival_rate: 5.5,
            packet_bits: 2048.0,
            buffer_cap: 20,
            buffer_constraint: 10.0,
            bandwidth: 1.0,
            discount: 0.9,
        }
    }
}

impl DownlinkParams {
    pub fn num_agents(&self) -> usize {
        self.mbs_fue_gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_agents();
        let bad = |m: &str| Err(Error::InvalidArgument(format!("downlink: {m}")));
        if k == 0 {
            return bad("at least one femto base station is required");
        }
        if self.fbs_mue_gains.len() != k {
            return bad("one fbs_mue gain per femto base station");
        }
        if self.fbs_fue_gains.len() != k || self.fbs_fue_gains.iter().any(|r| r.len() != k) {
            return bad("fbs_fue_gains must be K x K");
        }
        if self.fbs_power_levels.is_empty() {
            return bad("at least one power level is required");
        }
        let gains = self
            .mbs_fue_gains
            .iter()
            .chain(&self.fbs_mue_gains)
            .chain(self.fbs_fue_gains.iter().flatten())
            .chain(std::iter::once(&self.mbs_mue_gain));
        if gains.clone().any(|&g| !(g >= 0.0)) || self.fbs_power_levels.iter().any(|&p| !(p >= 0.0)) {
            return bad("gains and power levels must be nonnegative");
        }
        if !(self.noise_power > 0.0) || !(self.bandwidth > 0.0) || !(self.packet_bits > 0.0) || !(self.slot_ms > 0.0) {
            return bad("noise, bandwidth, slot and packet length must be positive");
        }
        if !(self.arrival_rate > 0.0) {
            return bad("arrival rate must be positive");
        }
        if (self.buffer_cap as f64) < self.buffer_constraint {
            return bad("buffer capacity must be at least the buffer constraint");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        Ok(())
    }

    /// Packets the macro link can serve in one slot at `rate` Mbit/s.
    pub fn service_packets(&self, rate: f64) -> f64 {
        // Mbit/s == 1e3 bit/ms
        self.slot_ms * rate * 1e3 / self.packet_bits
    }
}

/// Macro link rate [Mbit/s] under the femto powers.
pub fn downlink_mbs_rate(powers: &[f64], params: &DownlinkParams) -> f64 {
    let interference: f64 = params.noise_power
        + powers
            .iter()
            .zip(&params.fbs_mue_gains)
            .map(|(p, g)| p * g)
            .sum::<f64>();
    params.bandwidth * (1.0 + params.mbs_power * params.mbs_mue_gain / interference).log2()
}

/// Rate [Mbit/s] of femto base station `agent` at its user.
pub fn downlink_utility(agent: usize, powers: &[f64], params: &DownlinkParams) -> f64 {
    let h = &params.fbs_fue_gains;
    let mut interference = params.noise_power + params.mbs_fue_gains[agent] * params.mbs_power;
    for (other, &p) in powers.iter().enumerate() {
        if other != agent {
            interference += p * h[other][agent];
        }
    }
    params.bandwidth * (1.0 + powers[agent] * h[agent][agent] / interference).log2()
}

/// Shared cost: the current buffer length.
pub fn downlink_cost(buffer: usize) -> f64 {
    buffer as f64
}

/// `min((b - service)^+ + arrivals, cap)`.
pub fn buffer_step(buffer: f64, service: f64, arrivals: f64, cap: f64) -> f64 {
    ((buffer - service).max(0.0) + arrivals).min(cap)
}

/// Poisson packet count for one slot.
pub fn poisson_arrivals(rate: f64, slot_ms: f64, rng: &mut dyn RngCore) -> u64 {
    let mean = rate * slot_ms;
    if !(mean > 0.0) {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive Poisson mean");
    d.sample(rng) as u64
}

#[derive(Debug, Clone)]
pub struct DownlinkGame {
    params: DownlinkParams,
    space: JointSpace,
    utility_ranges: Vec<Interval>,
}

impl DownlinkGame {
    pub fn new(params: DownlinkParams) -> Result<Self> {
        params.validate()?;
        let k = params.num_agents();
        let space = JointSpace::new(vec![params.fbs_power_levels.len(); k])?;
        let max_p = params.fbs_power_levels.iter().copied().fold(0.0, f64::max);
        let utility_ranges = (0..k)
            .map(|i| {
                let floor = params.noise_power + params.mbs_fue_gains[i] * params.mbs_power;
                Interval::new(0.0, params.bandwidth * (1.0 + max_p * params.fbs_fue_gains[i][i] / floor).log2())
            })
            .collect();
        Ok(Self {
            params,
            space,
            utility_ranges,
        })
    }

    pub fn params(&self) -> &DownlinkParams {
        &self.params
    }

    pub fn powers(&self, joint: &[usize]) -> Vec<f64> {
        joint.iter().map(|&a| self.params.fbs_power_levels[a]).collect()
    }
}

impl Game for DownlinkGame {
    fn name(&self) -> &str {
        "downlink"
    }

    fn joint_space(&self) -> &JointSpace {
        &self.space
    }

    fn num_states(&self) -> usize {
        self.params.buffer_cap + 1
    }

    fn utility(&self, agent: usize, _state: usize, joint: &[usize]) -> f64 {
        downlink_utility(agent, &self.powers(joint), &self.params)
    }

    fn cost(&self, _agent: usize, state: usize, _joint: &[usize]) -> f64 {
        downlink_cost(state)
    }

    fn cost_bound(&self, _agent: usize) -> f64 {
        self.params.buffer_constraint
    }

    fn utility_range(&self, agent: usize) -> Interval {
        self.utility_ranges[agent]
    }

    fn cost_range(&self, _agent: usize) -> Interval {
        Interval::new(0.0, self.params.buffer_cap as f64)
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn next_state(&self, state: usize, joint: &[usize], rng: &mut dyn RngCore) -> usize {
        let rate = downlink_mbs_rate(&self.powers(joint), &self.params);
        // whole packets only
        let served = self.params.service_packets(rate).floor();
        let arrivals = poisson_arrivals(self.params.arrival_rate, self.params.slot_ms, rng) as f64;
        buffer_step(state as f64, served, arrivals, self.params.buffer_cap as f64) as usize
    }
}
