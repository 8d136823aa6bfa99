//! Ring-road traffic microsimulation and a spatially weighted Deep-Set Q-learning agent for
//! lane-change control of a connected autonomous vehicle.

pub mod action;
pub mod error;
pub mod sim;

pub use action::Action;
pub use error::{Error, Result};
pub mod agent;
pub mod baselines;
pub mod env;
pub mod harness;
pub mod neural;
pub mod observe;
