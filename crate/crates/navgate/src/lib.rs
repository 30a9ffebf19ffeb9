//! Object-goal navigation at desk scale: a grid-world simulator, an
//! actor-critic navigation policy, and a reward-supervised termination
//! judge that infers target depth from detection geometry to gate the
//! Done action.
//!
//! The guide under `book/` walks through every concept; its code snippets
//! compile and run as doctests of this crate.

pub mod checkpoint;
pub mod config;
pub mod cli;
pub mod control;
pub mod env;
pub mod error;
pub mod judge;
pub mod nn;
pub mod orchestrator;
pub mod perception;
pub mod metrics;
pub mod rl;
pub mod runner;

mod seeding;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
