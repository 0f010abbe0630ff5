//! Safety-aware Boolean task composition on labeled deterministic grid MDPs.

pub mod algebra;
pub mod error;
pub mod formula;
pub mod generate;
pub mod mdp;
pub mod oracle;
pub mod penalty;
pub mod persist;
pub mod planner;
pub mod render;
pub mod runtime;

pub use error::{Error, Result, Warning};
