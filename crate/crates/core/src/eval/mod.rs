//! Common-random-numbers Monte Carlo evaluation and report tables.
//!
//! Path `i` draws its market shocks from `(base_seed, i)` and its rule noise
//! from the policy stream of the same key, whatever strategy runs on it, so
//! strategy differences are paired path by path.

mod aggregates;
mod metrics;
mod table;

pub use aggregates::{emit_aggregates, Aggregates, Series};
pub use metrics::{compute_metrics, pooled_se, Metrics};
pub use table::{scenario_table, ScenarioTable};

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{simulate_with_noise, MarketParams, Trajectory, TradingRule};
use crate::rng::{policy_rng, NoiseMode, PathNoise};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_paths: usize,
    pub base_seed: u64,
    pub noise: NoiseMode,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_paths: 10_000,
            base_seed: 2024,
            noise: NoiseMode::Antithetic,
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidParams("n_paths must be at least 2".into()));
        }
        if self.noise == NoiseMode::Antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::InvalidParams("antithetic evaluation needs an even n_paths".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// A named rule to evaluate.
#[derive(Clone)]
pub struct Contender {
    pub name: String,
    pub rule: Arc<dyn TradingRule>,
}

impl Contender {
    pub fn new(name: impl Into<String>, rule: Arc<dyn TradingRule>) -> Self {
        Contender {
            name: name.into(),
            rule,
        }
    }
}

fn simulate_one(p: &MarketParams, c: &Contender, cfg: &EvalConfig, i: usize) -> Result<Trajectory> {
    let noise = PathNoise::generate(cfg.base_seed, i as u64, p.n_steps, p.rho, cfg.noise);
    let mut rng = policy_rng(cfg.base_seed, i as u64);
    simulate_with_noise(p, c.rule.as_ref(), &noise, &mut rng, cfg.base_seed ^ i as u64)
        .map_err(|e| e.context(format!("strategy {}, path {i}", c.name)))
}

/// All `cfg.n_paths` trajectories of one rule.
pub fn simulate_paths(p: &MarketParams, c: &Contender, cfg: &EvalConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    cfg.pool()?
        .install(|| (0..cfg.n_paths).into_par_iter().map(|i| simulate_one(p, c, cfg, i)).collect())
}

/// Per-path shortfalls of one rule.
pub fn shortfall_samples(p: &MarketParams, c: &Contender, cfg: &EvalConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    cfg.pool()?.install(|| {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| simulate_one(p, c, cfg, i).map(|t| t.shortfall))
            .collect()
    })
}

/// One (scenario, strategy) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub strategy: String,
    pub beta: f64,
    pub n_paths: usize,
    pub mean_is: f64,
    pub std_is: f64,
    pub ac: f64,
    pub se_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub row: ReportRow,
    pub metrics: Metrics,
    pub samples: Vec<f64>,
}

pub const REPORT_CSV_HEADER: [&str; 8] =
    ["scenario", "strategy", "beta", "n_paths", "mean_is", "std_is", "ac", "se_mean"];

/// Evaluates every contender on the same paths of `p`.
pub fn run_monte_carlo(
    scenario: &str,
    p: &MarketParams,
    contenders: &[Contender],
    cfg: &EvalConfig,
) -> Result<Vec<CellResult>> {
    p.validate()?;
    contenders
        .iter()
        .map(|c| {
            let samples = shortfall_samples(p, c, cfg)?;
            let metrics = compute_metrics(&samples, p.lambda, cfg.noise);
            Ok(CellResult {
                row: ReportRow {
                    scenario: scenario.to_string(),
                    strategy: c.name.clone(),
                    beta: p.beta,
                    n_paths: samples.len(),
                    mean_is: metrics.mean,
                    std_is: metrics.std,
                    ac: metrics.ac,
                    se_mean: metrics.se_mean,
                },
                metrics,
                samples,
            })
        })
        .collect()
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.strategy.clone(),
            r.beta.to_string(),
            r.n_paths.to_string(),
            r.mean_is.to_string(),
            r.std_is.to_string(),
            r.ac.to_string(),
            r.se_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: std::io::Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_CSV_HEADER {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Pre-trade expected shortfall of the uniform schedule: permanent impact
/// lowers the expected price to `S0 exp(-eta nu t)`, temporary impact costs
/// `eps nu^beta` per share.
pub fn twap_implied_shortfall(p: &MarketParams) -> f64 {
    let n = p.n_steps;
    let dt = p.dt();
    let x = p.x0 / n as f64;
    let nu = x / dt;
    (0..n)
        .map(|k| {
            let expected_s = p.s0 * (-p.eta * nu * p.time(k)).exp();
            x * (p.s0 - expected_s + p.epsilon * nu.powf(p.beta))
        })
        .sum()
}
