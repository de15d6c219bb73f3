//! Comparison learners: CE-Q, nested Q-learning with regret matching, and
//! plain regret matching on normal-form games.

pub mod ce;
pub mod ceq;
pub mod qnr;
pub mod regret_matching;

pub use ce::{lp_solve, utilitarian_ce, CePolytope};
pub use ceq::{CeqConfig, CeqRun, CeqVariant};
pub use qnr::{QnrConfig, QnrRun};
pub use regret_matching::{regret_matching_step, NormalFormLearner, RegretMatchingConfig, RegretMatchingRun};
