//! Cooperative-game credit assignment for multi-agent lane-change learning.
//!
//! The crate is split into five layers:
//!
//! * [`game`]: exact and sampled TU-game solution concepts (Shapley value,
//!   core, convexity, efficiency) over explicit characteristic tables.
//! * [`nn`]: a small fully-connected network with parameter and input
//!   gradients, an Adam optimizer and soft target updates.
//! * [`env`]: a seeded three-lane circular freeway with discrete lane-change
//!   actions and a velocity + comfort reward.
//! * [`marl`]: the Shapley-credit actor/characteristic-network trainer and the
//!   MADDPG / independent-learner baselines.
//! * [`harness`]: configuration, metrics, checkpoints, experiment protocols and
//!   the property verification suite used by the CLI.

pub mod env;
pub mod error;
pub mod game;
pub mod harness;
pub mod marl;
pub mod nn;

pub use error::{Error, Result};
