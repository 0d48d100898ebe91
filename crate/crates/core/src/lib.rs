//! Budget-aware fixed-level splitting for path-dependent resilience failures
//! in a stochastic network model, with a plain Monte Carlo baseline and
//! lookahead-based reconfiguration.

pub mod acceptance;
pub mod analysis;
pub mod config;
pub mod experiment;
pub mod levels;
pub mod mc;
pub mod netmodel;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod smc;
pub mod toy;
