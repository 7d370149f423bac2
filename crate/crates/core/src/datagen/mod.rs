//! Expert demonstration datasets over a market-parameter grid.

mod store;

pub use store::{read_dataset, write_dataset, ChunkInfo, FileInfo, Manifest, SCHEMA_VERSION};

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::normalize_obs;
use crate::error::{Error, Result};
use crate::experts::Strategy;
use crate::flow::FlowData;
use crate::market::{simulate_path, MarketParams, PathState, Trajectory, TradingRule};
use crate::ppo::{GaussianPolicy, PpoRegistry, PpoRule};
use crate::rng::{episode_seed, path_rng};
use crate::scenario::ScenarioLabel;

/// Episodes per chunk directory.
pub const CHUNK_EPISODES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub mu: Vec<f64>,
    pub sqrt_v0: Vec<f64>,
    pub xi: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: f64,
    pub sqrt_theta: f64,
    pub rho: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub strategies: Vec<Strategy>,
    pub episodes_per_cell: usize,
    pub base_seed: u64,
    /// Scenario to checkpoint map, needed only when `strategies` includes PPO.
    pub ppo_checkpoints: Option<PathBuf>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mu: vec![0.0, 0.02],
            sqrt_v0: vec![0.2, 0.3, 0.4],
            xi: vec![0.2, 0.3],
            beta: vec![0.3, 0.5, 0.8],
            kappa: 2.0,
            sqrt_theta: 0.3,
            rho: -0.7,
            eta: 2.5e-5,
            epsilon: 5e-5,
            lambda: 1e-5,
            strategies: vec![Strategy::Twap, Strategy::Vwap, Strategy::AcApprox, Strategy::HestonOptimal],
            episodes_per_cell: 100,
            base_seed: 42,
            ppo_checkpoints: None,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let lists = [("mu", &self.mu), ("sqrt_v0", &self.sqrt_v0), ("xi", &self.xi), ("beta", &self.beta)];
        for (name, l) in lists {
            if l.is_empty() {
                return Err(Error::InvalidParams(format!("grid axis {name} is empty")));
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidParams("grid has no strategies".into()));
        }
        if self.episodes_per_cell == 0 || self.episodes_per_cell > u32::MAX as usize {
            return Err(Error::InvalidParams("episodes_per_cell must be in 1..2^32".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.mu.len() * self.sqrt_v0.len() * self.xi.len() * self.beta.len() * self.strategies.len()
    }

    pub fn n_episodes(&self) -> usize {
        self.n_cells() * self.episodes_per_cell
    }
}

/// One (parameters, strategy) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: u32,
    pub params: MarketParams,
    pub strategy: Strategy,
    /// Nearest benchmark regime, used to pick PPO checkpoints.
    pub label: ScenarioLabel,
}

impl GridCell {
    pub fn seed(&self, base: u64, episode: u32) -> u64 {
        episode_seed(base, self.index, episode)
    }
}

/// Enumerates cells with strategies varying fastest, then `beta`, `xi`, `sqrt_v0`, `mu`.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<GridCell>> {
    spec.validate()?;
    let mut cells = Vec::with_capacity(spec.n_cells());
    for &mu in &spec.mu {
        for &sv in &spec.sqrt_v0 {
            for &xi in &spec.xi {
                for &beta in &spec.beta {
                    let params = MarketParams {
                        mu,
                        kappa: spec.kappa,
                        theta: spec.sqrt_theta * spec.sqrt_theta,
                        v0: sv * sv,
                        xi,
                        rho: spec.rho,
                        eta: spec.eta,
                        epsilon: spec.epsilon,
                        beta,
                        lambda: spec.lambda,
                        ..MarketParams::default()
                    };
                    params.validate()?;
                    for &strategy in &spec.strategies {
                        cells.push(GridCell {
                            index: cells.len() as u32,
                            label: ScenarioLabel::nearest(&params),
                            params: params.clone(),
                            strategy,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Per-step columns. Row `i` describes the decision at one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rows {
    /// `(T - t_k, q_k, S_k, V_k)` before the trade.
    pub state: Vec<[f32; 4]>,
    /// Normalized observation of the same state.
    pub obs: Vec<[f32; 4]>,
    pub shares: Vec<f32>,
    /// Fraction of the pre-trade inventory sold.
    pub action: Vec<f32>,
    pub exec_price: Vec<f32>,
    /// Cumulative proceeds after the trade.
    pub cash: Vec<f64>,
    /// `-x_k (S0 - exec_k) / (X0 S0) * 100`; sums to the negated IS in percent.
    pub reward: Vec<f32>,
    pub done: Vec<u8>,
}

impl Rows {
    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    fn push_trajectory(&mut self, p: &MarketParams, traj: &Trajectory) {
        let scale = 100.0 / (p.x0 * p.s0);
        let n = traj.steps.len();
        for (k, r) in traj.steps.iter().enumerate() {
            let q_before = traj.inventory_before(k);
            let state = PathState {
                t: r.t,
                s: r.s,
                v: r.v,
                q: q_before,
                cash: 0.0,
            };
            let obs = normalize_obs(&state, p).to_array();
            self.state.push([(p.horizon - r.t) as f32, q_before as f32, r.s as f32, r.v as f32]);
            self.obs.push(obs.map(|o| o as f32));
            self.shares.push(r.x as f32);
            self.action.push(if q_before > 0.0 { (r.x / q_before) as f32 } else { 0.0 });
            self.exec_price.push(r.exec_price as f32);
            self.cash.push(r.cash);
            self.reward.push((-r.x * (p.s0 - r.exec_price) * scale) as f32);
            self.done.push(u8::from(k + 1 == n));
        }
    }

    fn append(&mut self, other: Rows) {
        self.state.extend(other.state);
        self.obs.extend(other.obs);
        self.shares.extend(other.shares);
        self.action.extend(other.action);
        self.exec_price.extend(other.exec_price);
        self.cash.extend(other.cash);
        self.reward.extend(other.reward);
        self.done.extend(other.done);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub cell: u32,
    pub index: u32,
    pub seed: u64,
    /// First row of the episode.
    pub offset: u64,
    pub len: u32,
    pub shortfall: f64,
    pub final_inventory: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub cells: Vec<GridCell>,
    pub rows: Rows,
    pub episodes: Vec<EpisodeMeta>,
}

impl Dataset {
    /// Checks that episode offsets partition the rows exactly.
    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        let lens = [
            self.rows.state.len(),
            self.rows.obs.len(),
            self.rows.shares.len(),
            self.rows.action.len(),
            self.rows.exec_price.len(),
            self.rows.cash.len(),
            self.rows.reward.len(),
        ];
        if let Some(&bad) = lens.iter().find(|&&l| l != n) {
            return Err(Error::ShapeMismatch { expected: n, got: bad });
        }
        let mut next = 0u64;
        for e in &self.episodes {
            if e.offset != next || e.len == 0 || e.cell as usize >= self.cells.len() {
                return Err(Error::Format(format!(
                    "episode {} of cell {} does not continue the row partition at {next}",
                    e.index, e.cell
                )));
            }
            next += e.len as u64;
        }
        if next != n as u64 {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: next as usize,
            });
        }
        Ok(())
    }

    pub fn episode_rows(&self, e: &EpisodeMeta) -> std::ops::Range<usize> {
        e.offset as usize..(e.offset as usize + e.len as usize)
    }

    /// Observation/action pairs from cells accepted by `keep`, excluding each
    /// episode's forced final step.
    pub fn flow_data(&self, keep: impl Fn(&GridCell) -> bool) -> FlowData {
        let mut data = FlowData::default();
        for e in &self.episodes {
            if !keep(&self.cells[e.cell as usize]) {
                continue;
            }
            let rows = self.episode_rows(e);
            for i in rows.start..rows.end - 1 {
                data.push(self.rows.obs[i].map(f64::from), self.rows.action[i] as f64);
            }
        }
        data
    }

    /// Writes rows as CSV with cell, strategy and episode columns.
    pub fn export_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "cell", "strategy", "scenario", "episode", "k", "tau", "q", "S", "V", "shares", "action", "exec_price",
            "cash", "reward", "done",
        ])?;
        for e in &self.episodes {
            let cell = &self.cells[e.cell as usize];
            for (k, i) in self.episode_rows(e).enumerate() {
                let st = self.rows.state[i];
                w.write_record([
                    e.cell.to_string(),
                    cell.strategy.name().to_string(),
                    cell.label.to_string(),
                    e.index.to_string(),
                    k.to_string(),
                    st[0].to_string(),
                    st[1].to_string(),
                    st[2].to_string(),
                    st[3].to_string(),
                    self.rows.shares[i].to_string(),
                    self.rows.action[i].to_string(),
                    self.rows.exec_price[i].to_string(),
                    self.rows.cash[i].to_string(),
                    self.rows.reward[i].to_string(),
                    self.rows.done[i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Re-simulates `n` randomly chosen steps from their episode seeds and
    /// checks that the stored row and the following state match bit for bit.
    pub fn spot_check(&self, n: usize, seed: u64, registry: Option<&PpoRegistry>) -> Result<()> {
        use rand::Rng;
        if self.rows.is_empty() {
            return Ok(());
        }
        let mut rng = path_rng(seed, 0);
        let mut policies = PolicyCache::new(registry);
        for _ in 0..n {
            let e = self.episodes[rng.random_range(0..self.episodes.len())];
            let cell = &self.cells[e.cell as usize];
            let rule = policies.rule(cell)?;
            let traj = simulate_path(&cell.params, rule.as_ref(), e.seed)?;
            let mut fresh = Rows::default();
            fresh.push_trajectory(&cell.params, &traj);
            let k = rng.random_range(0..e.len as usize);
            let i = e.offset as usize + k;
            let last = (k + 2).min(e.len as usize);
            let same = (k..last).all(|j| {
                let s = e.offset as usize + j;
                fresh.state[j] == self.rows.state[s]
                    && fresh.shares[j] == self.rows.shares[s]
                    && fresh.action[j] == self.rows.action[s]
                    && fresh.cash[j] == self.rows.cash[s]
            });
            if !same {
                return Err(Error::Format(format!(
                    "row {i} (cell {}, episode {}, step {k}) does not re-simulate",
                    e.cell, e.index
                )));
            }
        }
        Ok(())
    }
}

/// Builds trading rules for cells, loading each PPO checkpoint once.
struct PolicyCache<'a> {
    registry: Option<&'a PpoRegistry>,
    loaded: HashMap<ScenarioLabel, Arc<GaussianPolicy>>,
}

impl<'a> PolicyCache<'a> {
    fn new(registry: Option<&'a PpoRegistry>) -> Self {
        PolicyCache {
            registry,
            loaded: HashMap::new(),
        }
    }

    fn rule(&mut self, cell: &GridCell) -> Result<Box<dyn TradingRule>> {
        match cell.strategy {
            Strategy::Ppo => {
                let registry = self
                    .registry
                    .ok_or_else(|| Error::MissingCheckpoint(format!("PPO cell {} ({}) needs grid.ppo_checkpoints", cell.index, cell.label)))?;
                let (label, path) = registry.resolve(cell.label)?;
                let policy = match self.loaded.entry(label) {
                    std::collections::hash_map::Entry::Occupied(e) => e.get().clone(),
                    std::collections::hash_map::Entry::Vacant(e) => e.insert(Arc::new(GaussianPolicy::load(path)?)).clone(),
                };
                Ok(Box::new(PpoRule::new(policy)))
            }
            s => s.analytic_rule(&cell.params),
        }
    }
}

fn collect_cell(
    grid: &GridSpec,
    cell: &GridCell,
    rule: &dyn TradingRule,
) -> Result<(Rows, Vec<EpisodeMeta>)> {
    let mut rows = Rows::default();
    let mut meta = Vec::with_capacity(grid.episodes_per_cell);
    for ep in 0..grid.episodes_per_cell as u32 {
        let seed = cell.seed(grid.base_seed, ep);
        let traj = simulate_path(&cell.params, rule, seed).map_err(|e| {
            e.context(format!("cell {} ({}) episode {ep}", cell.index, cell.strategy))
        })?;
        meta.push(EpisodeMeta {
            cell: cell.index,
            index: ep,
            seed,
            offset: rows.len() as u64,
            len: traj.steps.len() as u32,
            shortfall: traj.shortfall,
            final_inventory: traj.final_inventory(),
        });
        rows.push_trajectory(&cell.params, &traj);
    }
    Ok((rows, meta))
}

/// Simulates every episode of the grid. Cells run in parallel on `workers`
/// threads; the result does not depend on the worker count.
pub fn collect(grid: &GridSpec, registry: Option<&PpoRegistry>, workers: usize) -> Result<Dataset> {
    let cells = build_grid(grid)?;
    let mut cache = PolicyCache::new(registry);
    let rules = cells.iter().map(|c| cache.rule(c)).collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let parts = pool.install(|| {
        cells
            .par_iter()
            .zip(rules.par_iter())
            .map(|(c, r)| collect_cell(grid, c, r.as_ref()))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Rows::default();
    let mut episodes = Vec::with_capacity(grid.n_episodes());
    for (part_rows, part_meta) in parts {
        let base = rows.len() as u64;
        episodes.extend(part_meta.into_iter().map(|m| EpisodeMeta {
            offset: m.offset + base,
            ..m
        }));
        rows.append(part_rows);
    }
    let ds = Dataset {
        grid: grid.clone(),
        cells,
        rows,
        episodes,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GridSpec {
        GridSpec {
            mu: vec![0.0],
            sqrt_v0: vec![0.2, 0.4],
            xi: vec![0.3],
            beta: vec![0.5],
            episodes_per_cell: 3,
            ..Default::default()
        }
    }

    #[test]
    fn default_grid_counts() {
        let g = GridSpec::default();
        assert_eq!(g.n_episodes(), 14_400);
        assert_eq!(g.n_episodes() * 100, 1_440_000);
        let cells = build_grid(&g).unwrap();
        assert_eq!(cells.len(), 144);
        assert!(cells.iter().enumerate().all(|(i, c)| c.index as usize == i));
        let one = GridSpec {
            mu: vec![0.0],
            sqrt_v0: vec![0.3],
            xi: vec![0.2],
            beta: vec![0.5],
            strategies: vec![Strategy::Twap],
            episodes_per_cell: 1,
            ..Default::default()
        };
        assert_eq!(one.n_episodes(), 1);
        assert!(GridSpec { mu: vec![], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn twap_rows_are_uniform() {
        let g = GridSpec {
            strategies: vec![Strategy::Twap],
            ..tiny()
        };
        let ds = collect(&g, None, 1).unwrap();
        for e in &ds.episodes {
            for (k, i) in ds.episode_rows(e).enumerate() {
                assert_eq!(ds.rows.shares[i], 100.0);
                let expect = (1.0 / (100 - k) as f64) as f32;
                assert!((ds.rows.action[i] - expect).abs() <= 2.0 * f32::EPSILON * expect.max(1e-3));
            }
        }
    }

    #[test]
    fn shortfall_matches_cash_and_rewards() {
        let ds = collect(&tiny(), None, 2).unwrap();
        ds.validate().unwrap();
        for e in &ds.episodes {
            let p = &ds.cells[e.cell as usize].params;
            let r = ds.episode_rows(e);
            let cash = ds.rows.cash[r.end - 1];
            assert!((p.x0 * p.s0 - cash - e.shortfall).abs() <= 1e-9 * e.shortfall.abs().max(1.0));
            let rsum: f64 = r.clone().map(|i| ds.rows.reward[i] as f64).sum();
            assert!((rsum + e.shortfall / (p.x0 * p.s0) * 100.0).abs() < 1e-4);
            assert_eq!(ds.rows.done[r.end - 1], 1);
        }
        ds.spot_check(20, 1, None).unwrap();
    }

    #[test]
    fn worker_count_does_not_change_output() {
        assert_eq!(collect(&tiny(), None, 1).unwrap(), collect(&tiny(), None, 3).unwrap());
    }

    #[test]
    fn ppo_cells_need_a_checkpoint() {
        let g = GridSpec {
            strategies: vec![Strategy::Ppo],
            ..tiny()
        };
        assert!(matches!(collect(&g, None, 1), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn flow_data_skips_final_step() {
        let ds = collect(&tiny(), None, 1).unwrap();
        assert_eq!(ds.flow_data(|_| true).len(), ds.rows.len() - ds.episodes.len());
        let ho = ds.flow_data(|c| c.strategy == Strategy::HestonOptimal);
        assert_eq!(ho.len(), 2 * 3 * 99);
    }
}
