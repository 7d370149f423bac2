//! Episodic execution environment for RL experts and trajectory collection.
//!
//! Actions are the fraction of the *remaining* inventory to sell this step. The
//! final step always sells everything. Pricing and reward follow the gym-style
//! environment: the fill is charged half of its own permanent impact
//! (`P_exec = S - eps nu^beta - eta shares / 2`), and the reward is the negative
//! execution cost in percent of the initial notional, less a running
//! inventory-risk penalty and a terminal leftover penalty.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{step_variance, MarketParams, PathState, PermanentImpact, StepRecord, Trajectory};
use crate::rng::{correlated_normals, path_rng, SimRng};

pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const DONE_INVENTORY: f64 = 1e-6;
/// Post-trade prices are floored at this fraction of `S0`; additive
/// permanent impact from a large block can otherwise push `S` below zero.
pub const PRICE_FLOOR_FRAC: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub market: MarketParams,
    /// Weight of the running `q^2 V dt` penalty.
    pub lambda_risk: f64,
    /// Penalty per unit of leftover inventory fraction at termination.
    pub phi: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            market: MarketParams {
                permanent_impact: PermanentImpact::PriceLevel,
                ..MarketParams::default()
            },
            lambda_risk: 1e-8,
            phi: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn new(market: MarketParams) -> Self {
        EnvConfig {
            market,
            ..Default::default()
        }
    }

    /// Like [`EnvConfig::new`] but switching `market` to price-level
    /// permanent impact, as in the default configuration.
    pub fn price_level(market: MarketParams) -> Self {
        EnvConfig::new(MarketParams {
            permanent_impact: PermanentImpact::PriceLevel,
            ..market
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.lambda_risk < 0.0 || self.phi < 0.0 || !self.lambda_risk.is_finite() || !self.phi.is_finite() {
            return Err(Error::InvalidParams("lambda_risk >= 0 and phi >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time_left_frac: f64,
    pub inv_frac: f64,
    pub log_price: f64,
    pub log_vol: f64,
}

impl Observation {
    pub const DIM: usize = 4;

    pub fn to_array(&self) -> [f64; 4] {
        [self.time_left_frac, self.inv_frac, self.log_price, self.log_vol]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Observation {
            time_left_frac: a[0],
            inv_frac: a[1],
            log_price: a[2],
            log_vol: a[3],
        }
    }
}

pub fn normalize_obs(raw: &PathState, p: &MarketParams) -> Observation {
    Observation {
        time_left_frac: ((p.horizon - raw.t) / p.horizon).clamp(0.0, 1.0),
        inv_frac: (raw.q / p.x0).clamp(0.0, 1.0),
        log_price: raw.s.ln(),
        log_vol: 0.5 * raw.v.max(VARIANCE_FLOOR).ln(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub exec_price: f64,
    pub cost: f64,
    pub shares: f64,
    /// Whether the requested action was outside `[0, 1]`.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One row of an episode trace (post-step inventory and cash).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvTraceRow {
    pub k: usize,
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub q: f64,
    pub x: f64,
    pub nu: f64,
    pub exec_price: f64,
    pub cash: f64,
    pub reward: f64,
}

pub struct ExecutionEnv {
    cfg: EnvConfig,
    state: PathState,
    k: usize,
    done: bool,
    rng: SimRng,
    clamp_count: usize,
    price_floor_hits: usize,
    trace: Vec<EnvTraceRow>,
}

impl ExecutionEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let state = PathState::initial(&cfg.market);
        Ok(ExecutionEnv {
            cfg,
            state,
            k: 0,
            done: true,
            rng: path_rng(0, 0),
            clamp_count: 0,
            price_floor_hits: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> PathState {
        self.state
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// Steps in the current episode whose post-trade price hit the floor.
    pub fn price_floor_hits(&self) -> usize {
        self.price_floor_hits
    }

    pub fn trace(&self) -> &[EnvTraceRow] {
        &self.trace
    }

    pub fn observation(&self) -> Observation {
        normalize_obs(&self.state, &self.cfg.market)
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.state = PathState::initial(&self.cfg.market);
        self.k = 0;
        self.done = false;
        self.rng = path_rng(seed, 0);
        self.clamp_count = 0;
        self.price_floor_hits = 0;
        self.trace.clear();
        self.observation()
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let p = &self.cfg.market;
        let dt = p.dt();
        let clamped = !(0.0..=1.0).contains(&action) || action.is_nan();
        if clamped {
            self.clamp_count += 1;
        }
        let mut a = if action.is_nan() { 0.0 } else { action.clamp(0.0, 1.0) };
        if self.k + 1 >= p.n_steps {
            a = 1.0;
        }

        let s = &mut self.state;
        // A residual at or below the done threshold is sold with this trade.
        let shares = if s.q - a * s.q <= DONE_INVENTORY { s.q } else { a * s.q };
        let nu = shares / dt;
        let temp = p.epsilon * nu.powf(p.beta);
        let perm = p.eta * nu;
        let exec_price = s.s - temp - 0.5 * p.eta * shares;
        let cost = temp * shares + 0.5 * p.eta * shares * shares;
        s.cash += exec_price * shares;
        s.q -= shares;

        let (w_s, w_v) = correlated_normals(&mut self.rng, p.rho);
        let v_next = step_variance(s.v, dt, w_v, p);
        let dln = (p.mu - 0.5 * s.v) * dt + (s.v * dt).sqrt() * w_s;
        let s_next = match p.permanent_impact {
            PermanentImpact::PriceLevel => s.s * dln.exp() - perm,
            PermanentImpact::LogDrift => (s.s.ln() + dln - perm * dt).exp(),
        };
        if !s_next.is_finite() || !v_next.is_finite() {
            return Err(Error::NonFiniteState {
                step: self.k,
                what: format!("S = {s_next}, V = {v_next}"),
            });
        }
        let floor = PRICE_FLOOR_FRAC * p.s0;
        let s_next = if s_next < floor {
            self.price_floor_hits += 1;
            floor
        } else {
            s_next
        };
        let t_decision = s.t;
        let s_decision = s.s;
        let v_decision = s.v;
        s.s = s_next;
        s.v = v_next;
        self.k += 1;
        s.t = p.time(self.k);

        self.done = self.k >= p.n_steps || s.q <= DONE_INVENTORY;
        let hold = -self.cfg.lambda_risk * s.q * s.q * s.v * dt;
        let mut reward = -cost / (p.x0 * p.s0) * 100.0 + hold;
        if self.done && s.q > 0.0 {
            reward -= self.cfg.phi * s.q / p.x0;
        }

        self.trace.push(EnvTraceRow {
            k: self.k - 1,
            t: t_decision,
            s: s_decision,
            v: v_decision,
            q: s.q,
            x: shares,
            nu,
            exec_price,
            cash: s.cash,
            reward,
        });

        Ok(StepResult {
            obs: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                exec_price,
                cost,
                shares,
                clamped,
            },
        })
    }

    /// `X0 * S0` less the cash collected so far.
    pub fn shortfall(&self) -> f64 {
        self.cfg.market.x0 * self.cfg.market.s0 - self.state.cash
    }

    /// The episode so far as a market trajectory (rewards dropped).
    pub fn trajectory(&self, seed: u64) -> Trajectory {
        let p = &self.cfg.market;
        Trajectory {
            steps: self
                .trace
                .iter()
                .map(|r| StepRecord {
                    k: r.k,
                    t: r.t,
                    s: r.s,
                    v: r.v,
                    q: r.q,
                    x: r.x,
                    nu: r.nu,
                    exec_price: r.exec_price,
                    cash: r.cash,
                })
                .collect(),
            shortfall: self.shortfall(),
            seed,
            x0: p.x0,
            s0: p.s0,
        }
    }

    /// Episode trace with the market trajectory columns plus `reward`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "t", "S", "V", "q", "x", "nu", "exec_price", "cash", "reward"])?;
        for r in &self.trace {
            w.write_record(&[
                r.k.to_string(),
                r.t.to_string(),
                r.s.to_string(),
                r.v.to_string(),
                r.q.to_string(),
                r.x.to_string(),
                r.nu.to_string(),
                r.exec_price.to_string(),
                r.cash.to_string(),
                r.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> ExecutionEnv {
        ExecutionEnv::new(EnvConfig::default()).unwrap()
    }

    #[test]
    fn reset_observation() {
        let mut e = env();
        let o = e.reset(1);
        assert_eq!(o.time_left_frac, 1.0);
        assert_eq!(o.inv_frac, 1.0);
        assert!((o.log_price - 100f64.ln()).abs() < 1e-15);
        assert!((o.log_vol - 0.4f64.ln()).abs() < 1e-12);

        let mut cfg = EnvConfig::default();
        cfg.market.v0 = 1.0;
        let mut e = ExecutionEnv::new(cfg).unwrap();
        assert_eq!(e.reset(0).log_vol, 0.0);
    }

    #[test]
    fn normalize_edge_cases() {
        let p = MarketParams::default();
        let o = normalize_obs(
            &PathState {
                t: 1.0,
                s: 100.0,
                v: 0.16,
                q: 0.0,
                cash: 0.0,
            },
            &p,
        );
        assert_eq!(o.time_left_frac, 0.0);
        assert_eq!(o.inv_frac, 0.0);
        assert!((o.log_price - 4.60517).abs() < 1e-5);
        assert!((o.log_vol + 0.91629).abs() < 1e-5);
        let o = normalize_obs(
            &PathState {
                t: 0.0,
                s: 1.0,
                v: 0.0,
                q: 1.0,
                cash: 0.0,
            },
            &p,
        );
        assert!(o.log_vol.is_finite());
    }

    #[test]
    fn worked_step() {
        let mut cfg = EnvConfig::default();
        cfg.market.epsilon = 1e-4;
        cfg.market.beta = 0.5;
        cfg.market.eta = 5e-5;
        let mut e = ExecutionEnv::new(cfg).unwrap();
        e.reset(3);
        let r = e.step(0.01).unwrap();
        assert!((r.info.shares - 100.0).abs() < 1e-12);
        assert!((r.info.exec_price - 99.9875).abs() < 1e-12);
        assert!((r.info.cost - 1.25).abs() < 1e-12);
        assert!((e.state().cash - 99.9875 * 100.0).abs() < 1e-9);
    }

    #[test]
    fn idle_step_is_hold_only() {
        let mut e = env();
        e.reset(4);
        let r = e.step(0.0).unwrap();
        assert_eq!(r.info.shares, 0.0);
        assert_eq!(r.info.cost, 0.0);
        let s = e.state();
        let hold = -e.config().lambda_risk * s.q * s.q * s.v * e.config().market.dt();
        assert_eq!(r.reward, hold);
    }

    #[test]
    fn last_step_forces_liquidation() {
        let mut e = env();
        e.reset(5);
        let n = e.config().market.n_steps;
        for _ in 0..n - 1 {
            assert!(!e.step(0.0).unwrap().done);
        }
        let r = e.step(0.0).unwrap();
        assert!(r.done);
        assert_eq!(e.state().q, 0.0);
        assert!(matches!(e.step(0.5), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn early_completion_ends_episode() {
        let mut e = env();
        e.reset(6);
        let r = e.step(1.0).unwrap();
        assert!(r.done);
        assert_eq!(e.trace().len(), 1);
    }

    #[test]
    fn actions_are_clamped_and_counted() {
        let mut e = env();
        e.reset(7);
        let r = e.step(-3.0).unwrap();
        assert_eq!(r.info.shares, 0.0);
        assert!(r.info.clamped);
        let r = e.step(0.2).unwrap();
        assert!(!r.info.clamped);
        e.step(4.0).unwrap();
        assert_eq!(e.clamp_count(), 2);
        assert!(e.is_done());
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = env();
        let mut b = env();
        a.reset(99);
        b.reset(99);
        for k in 0..50 {
            let x = a.step(0.03 + 0.001 * k as f64).unwrap();
            let y = b.step(0.03 + 0.001 * k as f64).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn cash_is_sum_of_fills() {
        let mut e = env();
        e.reset(12);
        while !e.is_done() {
            e.step(0.05).unwrap();
        }
        let fills: f64 = e.trace().iter().map(|r| r.exec_price * r.x).sum();
        assert!((fills - e.state().cash).abs() < 1e-6);
    }

    #[test]
    fn block_sale_floors_price() {
        let mut cfg = EnvConfig::default();
        cfg.market.eta = 2e-4;
        let mut e = ExecutionEnv::new(cfg).unwrap();
        e.reset(3);
        // One-step sale of 1e4 shares: eta * nu = 2e-4 * 1e6 = 200 > S.
        let r = e.step(1.0).unwrap();
        assert!(r.done);
        assert_eq!(e.state().s, PRICE_FLOOR_FRAC * 100.0);
        assert_eq!(e.price_floor_hits(), 1);
        assert!(r.obs.log_price.is_finite());
    }
}
