//! Single-lane traffic microsimulation: a fuzzy cellular-automaton engine
//! driven by a pair of deterministic rules, a stochastic NaSch Monte Carlo
//! baseline, calibration between the two, and measurement/benchmark tooling.

pub mod channel;
pub mod cli;
pub mod error;
pub mod fuzzy;
pub mod metrics;
pub mod nasch;
pub mod rules;
pub mod scenario;
pub mod tfn;

pub use error::{Result, SimError};
pub use tfn::TriangularFuzzy;
