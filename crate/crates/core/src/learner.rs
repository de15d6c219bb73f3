//! Interface shared by CNRQ and the baselines so the harness can drive any of
//! them and log a uniform metrics schema.

use crate::error::Result;
use crate::game::Game;

/// Everything observed during one iteration of a learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// 1-based iteration number.
    pub iteration: u64,
    pub state: usize,
    pub joint: Vec<usize>,
    pub next_state: usize,
    pub utilities: Vec<f64>,
    pub costs: Vec<f64>,
    /// Multipliers after this iteration's dual update.
    pub lambdas: Vec<f64>,
    /// Set by semi-distributed CE-Q: whether agents selected different equilibria.
    pub miscoordinated: Option<bool>,
}

/// Convergence diagnostics evaluated on demand (they are comparatively costly).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Largest positive CE residual of the empirical joint play against the
    /// current Q-tables.
    pub max_positive_residual: f64,
    /// Sum over agents of `1/2 * sum Y(R)^2`.
    pub lyapunov: f64,
}

pub trait MultiAgentLearner {
    fn game(&self) -> &dyn Game;

    fn current_state(&self) -> usize;

    fn step(&mut self) -> Result<Transition>;

    fn diagnostics(&self) -> Result<Diagnostics>;
}
