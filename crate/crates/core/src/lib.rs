//! Trace-driven mini-slot MAC simulation with a learned joint channel-access
//! and rate-selection policy.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod mac;
pub mod nn;
pub mod phy;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
