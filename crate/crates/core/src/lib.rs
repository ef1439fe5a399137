//! Over-the-air delay modelling and minimisation for grant-free uplink
//! access with short packets.

pub mod access;
pub mod baselines;
pub mod cli;
pub mod delaymodel;
pub mod error;
pub mod exec;
pub mod linkmodel;
pub mod marl;
pub mod queueing;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use exec::Exec;
