//! Optimal trade execution under Heston stochastic volatility with concave
//! market impact.
//!
//! The crate covers the full pipeline: market simulation, analytic and learned
//! execution strategies, expert-dataset generation, shortcut flow-matching
//! imitation, PPO experts and common-random-numbers benchmarking.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod env;
pub mod error;
pub mod eval;
pub mod experts;
pub mod flow;
pub mod market;
pub mod neural;
pub mod ppo;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use market::{MarketParams, PathState, Trajectory, TradingRule};
