//! Numerical engine for rate allocation games on Gaussian multiple-access
//! channels: capacity regions, static equilibria, population dynamics,
//! correlated devices and the multi-receiver hybrid game.

pub mod capacity;
pub mod correlated;
pub mod error;
pub mod hybrid_dynamics;
pub mod hybrid_game;
pub mod numerics;
pub mod population;
pub mod static_game;
pub mod utility;

pub use capacity::{
    build_region, safe_rate, CapacityRegion, Coalition, LogBase, RateProfile,
    SingleReceiverScenario,
};
pub use error::{Error, Result};
pub use static_game::StaticGame;
pub use utility::{UtilityFamily, UtilitySpec};
