//! Environments behind the [`Game`](crate::game::Game) contract.

pub mod downlink;
pub mod synthetic;
pub mod uplink;

pub use downlink::{DownlinkGame, DownlinkParams};
pub use synthetic::{make_synthetic_game, SyntheticGame, SyntheticTables};
pub use uplink::{UplinkGame, UplinkParams};
