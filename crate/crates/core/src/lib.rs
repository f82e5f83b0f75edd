//! Risk-sensitive actor-critic portfolio allocation with recursive
//! (Epstein–Zin) utility.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: price ingestion, returns, winsorization, chronological splits
//! - [`env`]: the portfolio MDP (simplex actions, self-financing wealth)
//! - [`utility`]: CES aggregator, certainty equivalents, value targets and a
//!   tabular Bellman-operator harness
//! - [`advantage`]: EZ residuals, approximate advantage estimation, GAE
//! - [`nn`]: small MLPs with hand-written reverse-mode gradients and Adam
//! - [`agents`]: PPO / A2C / REINFORCE / Random over the three objectives
//! - [`prior`]: Campbell–Viceira style myopic allocation prior
//! - [`metrics`]: backtest metrics and cross-split aggregation
//! - [`config`] and [`harness`]: run configuration and the ingest / train /
//!   evaluate / ablate / report pipeline

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod agents;
pub mod config;
pub mod data;
pub mod env;
mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod synthetic;
pub mod utility;

pub use error::{Error, Result};
