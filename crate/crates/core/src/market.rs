//! Heston price/variance dynamics with power-law temporary impact and linear
//! permanent impact, plus full-path simulation under an arbitrary trading rule.
//!
//! One simulation step `k` (time `t_k = k T / N`):
//!
//! ```text
//! x_k   = rule(state_k)                  shares sold, clamped to [0, q_k]; x_{N-1} = q_{N-1}
//! nu_k  = x_k / dt
//! S~_k  = S_k - eps * nu_k^beta          execution price
//! C    += x_k * S~_k,  q -= x_k
//! ln S' = ln S + (mu - V/2 - eta nu) dt + sqrt(V dt) z1
//! V'    = max(0, V + kappa (theta - V) dt + xi sqrt(V dt) zv + xi^2 dt / 4 (zv^2 - 1))
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{policy_rng, NoiseMode, PathNoise, SimRng};

/// Where the permanent impact enters the price update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermanentImpact {
    /// `-eta * nu * dt` inside the log-price drift.
    #[default]
    LogDrift,
    /// `S * exp(dlnS) - eta * nu`, subtracted from the price level after the step.
    PriceLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    pub mu: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub lambda: f64,
    pub s0: f64,
    pub v0: f64,
    pub x0: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub permanent_impact: PermanentImpact,
}

impl Default for MarketParams {
    /// The high-volatility, high-impact scenario at beta = 0.5.
    fn default() -> Self {
        MarketParams {
            mu: 0.0,
            kappa: 2.0,
            theta: 0.16,
            xi: 0.5,
            rho: -0.7,
            eta: 5e-5,
            epsilon: 1e-4,
            beta: 0.5,
            lambda: 1e-5,
            s0: 100.0,
            v0: 0.16,
            x0: 10_000.0,
            horizon: 1.0,
            n_steps: 100,
            permanent_impact: PermanentImpact::LogDrift,
        }
    }
}

impl MarketParams {
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let finite = [
            self.mu, self.kappa, self.theta, self.xi, self.rho, self.eta, self.epsilon, self.beta,
            self.lambda, self.s0, self.v0, self.x0, self.horizon,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            bad.push("all parameters must be finite");
        }
        if self.kappa <= 0.0 {
            bad.push("kappa > 0");
        }
        if self.theta <= 0.0 {
            bad.push("theta > 0");
        }
        if self.xi < 0.0 {
            bad.push("xi >= 0");
        }
        if self.rho.abs() > 1.0 {
            bad.push("|rho| <= 1");
        }
        if self.epsilon < 0.0 {
            bad.push("epsilon >= 0");
        }
        if self.eta < 0.0 {
            bad.push("eta >= 0");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            bad.push("0 < beta <= 1");
        }
        if self.n_steps < 1 {
            bad.push("n_steps >= 1");
        }
        if self.x0 <= 0.0 {
            bad.push("x0 > 0");
        }
        if self.s0 <= 0.0 {
            bad.push("s0 > 0");
        }
        if self.v0 < 0.0 {
            bad.push("v0 >= 0");
        }
        if self.horizon <= 0.0 {
            bad.push("horizon > 0");
        }
        if self.lambda < 0.0 {
            bad.push("lambda >= 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(bad.join(", ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: MarketParams = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Milstein update of the variance, floored at zero (full truncation).
pub fn step_variance(v: f64, dt: f64, zv: f64, p: &MarketParams) -> f64 {
    let next = v
        + p.kappa * (p.theta - v) * dt
        + p.xi * (v * dt).sqrt() * zv
        + p.xi * p.xi * dt / 4.0 * (zv * zv - 1.0);
    next.max(0.0)
}

/// Log-Euler price step with permanent impact in the drift.
pub fn step_price(s: f64, v: f64, nu: f64, dt: f64, z1: f64, p: &MarketParams) -> f64 {
    s * ((p.mu - 0.5 * v - p.eta * nu) * dt + (v * dt).sqrt() * z1).exp()
}

/// Price step honouring `p.permanent_impact`.
pub fn advance_price(s: f64, v: f64, nu: f64, dt: f64, z1: f64, p: &MarketParams) -> f64 {
    match p.permanent_impact {
        PermanentImpact::LogDrift => step_price(s, v, nu, dt, z1, p),
        PermanentImpact::PriceLevel => {
            let dln = (p.mu - 0.5 * v) * dt + (v * dt).sqrt() * z1;
            s * dln.exp() - p.eta * nu
        }
    }
}

/// Mid price less the temporary impact `epsilon * nu^beta`.
pub fn execution_price(s: f64, nu: f64, p: &MarketParams) -> f64 {
    s - p.epsilon * nu.max(0.0).powf(p.beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub q: f64,
    pub cash: f64,
}

impl PathState {
    pub fn initial(p: &MarketParams) -> Self {
        PathState {
            t: 0.0,
            s: p.s0,
            v: p.v0,
            q: p.x0,
            cash: 0.0,
        }
    }
}

/// One executed step. `q` and `cash` are recorded after the fill.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub q: f64,
    pub x: f64,
    pub nu: f64,
    pub exec_price: f64,
    pub cash: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub shortfall: f64,
    pub seed: u64,
    pub x0: f64,
    pub s0: f64,
}

pub const TRAJECTORY_CSV_HEADER: [&str; 9] = ["k", "t", "S", "V", "q", "x", "nu", "exec_price", "cash"];

impl Trajectory {
    pub fn final_cash(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cash)
    }

    pub fn final_inventory(&self) -> f64 {
        self.steps.last().map_or(self.x0, |s| s.q)
    }

    /// Inventory held when step `k`'s decision was taken.
    pub fn inventory_before(&self, k: usize) -> f64 {
        if k == 0 {
            self.x0
        } else {
            self.steps[k - 1].q
        }
    }

    pub fn total_shares(&self) -> f64 {
        self.steps.iter().map(|s| s.x).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAJECTORY_CSV_HEADER)?;
        for s in &self.steps {
            w.write_record(&[
                s.k.to_string(),
                s.t.to_string(),
                s.s.to_string(),
                s.v.to_string(),
                s.q.to_string(),
                s.x.to_string(),
                s.nu.to_string(),
                s.exec_price.to_string(),
                s.cash.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What a trading rule sees before step `step`.
#[derive(Clone, Copy, Debug)]
pub struct DecisionContext<'a> {
    pub step: usize,
    pub state: PathState,
    pub params: &'a MarketParams,
}

impl DecisionContext<'_> {
    pub fn is_last_step(&self) -> bool {
        self.step + 1 >= self.params.n_steps
    }

    pub fn time_left(&self) -> f64 {
        self.params.horizon - self.state.t
    }
}

/// A liquidation rule: shares to sell at the current decision point.
///
/// Returned values are clamped to `[0, q]`; the simulator always sells the
/// remainder on the final step.
pub trait TradingRule: Send + Sync {
    fn shares(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> f64;
}

impl<T: TradingRule + ?Sized> TradingRule for &T {
    fn shares(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> f64 {
        (**self).shares(ctx, rng)
    }
}

impl<T: TradingRule + ?Sized> TradingRule for Box<T> {
    fn shares(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> f64 {
        (**self).shares(ctx, rng)
    }
}

/// Simulates path 0 of `seed`.
pub fn simulate_path(p: &MarketParams, rule: &dyn TradingRule, seed: u64) -> Result<Trajectory> {
    let noise = PathNoise::generate(seed, 0, p.n_steps, p.rho, NoiseMode::Independent);
    let mut rng = policy_rng(seed, 0);
    simulate_with_noise(p, rule, &noise, &mut rng, seed)
}

/// Simulates one path on pre-drawn shocks.
pub fn simulate_with_noise(
    p: &MarketParams,
    rule: &dyn TradingRule,
    noise: &PathNoise,
    rule_rng: &mut SimRng,
    seed: u64,
) -> Result<Trajectory> {
    if noise.len() < p.n_steps {
        return Err(Error::ShapeMismatch {
            expected: p.n_steps,
            got: noise.len(),
        });
    }
    let dt = p.dt();
    let mut state = PathState::initial(p);
    let mut steps = Vec::with_capacity(p.n_steps);

    for k in 0..p.n_steps {
        state.t = p.time(k);
        let ctx = DecisionContext {
            step: k,
            state,
            params: p,
        };
        let x = if ctx.is_last_step() {
            state.q
        } else {
            let raw = rule.shares(&ctx, rule_rng);
            if raw.is_nan() {
                return Err(Error::NonFiniteState {
                    step: k,
                    what: "trading rule returned NaN".into(),
                });
            }
            raw.clamp(0.0, state.q)
        };
        let nu = x / dt;
        let exec = execution_price(state.s, nu, p);
        state.cash += x * exec;
        state.q -= x;
        if state.q < 0.0 {
            state.q = 0.0;
        }
        steps.push(StepRecord {
            k,
            t: state.t,
            s: state.s,
            v: state.v,
            q: state.q,
            x,
            nu,
            exec_price: exec,
            cash: state.cash,
        });

        let (z1, zv) = noise.shocks[k];
        let s_next = advance_price(state.s, state.v, nu, dt, z1, p);
        let v_next = step_variance(state.v, dt, zv, p);
        if !s_next.is_finite() || !v_next.is_finite() || !state.cash.is_finite() {
            return Err(Error::NonFiniteState {
                step: k,
                what: format!("S = {s_next}, V = {v_next}, C = {}", state.cash),
            });
        }
        state.s = s_next;
        state.v = v_next;
    }

    Ok(Trajectory {
        shortfall: p.x0 * p.s0 - state.cash,
        steps,
        seed,
        x0: p.x0,
        s0: p.s0,
    })
}

/// `X0 * S0` less the summed fill proceeds.
pub fn implementation_shortfall(traj: &Trajectory) -> f64 {
    traj.x0 * traj.s0 - traj.steps.iter().map(|s| s.x * s.exec_price).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform;
    impl TradingRule for Uniform {
        fn shares(&self, ctx: &DecisionContext<'_>, _: &mut SimRng) -> f64 {
            ctx.params.x0 / ctx.params.n_steps as f64
        }
    }

    struct Idle;
    impl TradingRule for Idle {
        fn shares(&self, _: &DecisionContext<'_>, _: &mut SimRng) -> f64 {
            0.0
        }
    }

    #[test]
    fn deterministic_variance_drift() {
        let p = MarketParams {
            xi: 0.0,
            theta: 0.16,
            kappa: 2.0,
            ..Default::default()
        };
        assert!((step_variance(0.04, 0.01, 0.3, &p) - 0.0424).abs() < 1e-15);
        assert_eq!(step_variance(0.16, 0.01, -1.2, &p), 0.16);
    }

    #[test]
    fn milstein_single_step() {
        let p = MarketParams {
            kappa: 2.0,
            theta: 0.16,
            xi: 0.5,
            ..Default::default()
        };
        assert!((step_variance(0.16, 0.01, 1.0, &p) - 0.18).abs() < 1e-15);
    }

    #[test]
    fn variance_is_clamped() {
        let p = MarketParams {
            xi: 2.0,
            ..Default::default()
        };
        assert_eq!(step_variance(1e-4, 0.01, -0.1, &p), 0.0);
    }

    #[test]
    fn price_step_cases() {
        let p = MarketParams {
            mu: 0.0,
            eta: 5e-5,
            ..Default::default()
        };
        assert_eq!(step_price(100.0, 0.0, 0.0, 0.01, 0.7, &p), 100.0);
        let s = step_price(100.0, 0.0, 10_000.0, 0.01, 0.0, &p);
        assert!((s - 100.0 * (-0.005f64).exp()).abs() < 1e-12);
        let s = step_price(100.0, 0.16, 0.0, 0.01, 1.0, &p);
        let expected = (100.0f64.ln() - 0.0008 + 0.04).exp();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 103.998).abs() < 1e-3);
    }

    #[test]
    fn execution_price_cases() {
        let p = MarketParams {
            epsilon: 1e-4,
            beta: 0.5,
            ..Default::default()
        };
        assert_eq!(execution_price(100.0, 0.0, &p), 100.0);
        assert!((execution_price(100.0, 10_000.0, &p) - 99.99).abs() < 1e-12);
        let lin = MarketParams {
            epsilon: 5e-5,
            beta: 1.0,
            ..Default::default()
        };
        assert!((execution_price(100.0, 10_000.0, &lin) - 99.5).abs() < 1e-12);
        let free = MarketParams {
            epsilon: 0.0,
            ..Default::default()
        };
        assert_eq!(execution_price(100.0, 5e5, &free), 100.0);
    }

    #[test]
    fn frictionless_constant_price() {
        let p = MarketParams {
            eta: 0.0,
            epsilon: 0.0,
            mu: 0.0,
            xi: 0.0,
            v0: 0.0,
            theta: 1e-300,
            ..Default::default()
        };
        let traj = simulate_path(&p, &Uniform, 5).unwrap();
        assert!(traj.steps.iter().all(|s| s.s == p.s0));
        assert!(traj.shortfall.abs() < 1e-6);
    }

    #[test]
    fn idle_rule_is_forced_to_liquidate() {
        let p = MarketParams::default();
        let traj = simulate_path(&p, &Idle, 1).unwrap();
        let last = traj.steps.last().unwrap();
        assert_eq!(last.x, p.x0);
        assert_eq!(last.q, 0.0);
        assert!((traj.total_shares() - p.x0).abs() < 1e-9);
    }

    #[test]
    fn shortfall_two_ways_agree() {
        let p = MarketParams::default();
        let traj = simulate_path(&p, &Uniform, 77).unwrap();
        let a = implementation_shortfall(&traj);
        let b = p.x0 * p.s0 - traj.final_cash();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        assert_eq!(b, traj.shortfall);
    }

    #[test]
    fn unit_price_concession() {
        let traj = Trajectory {
            steps: vec![StepRecord {
                k: 0,
                t: 0.0,
                s: 100.0,
                v: 0.0,
                q: 0.0,
                x: 10_000.0,
                nu: 0.0,
                exec_price: 99.0,
                cash: 990_000.0,
            }],
            shortfall: 10_000.0,
            seed: 0,
            x0: 10_000.0,
            s0: 100.0,
        };
        assert_eq!(implementation_shortfall(&traj), 10_000.0);
    }

    #[test]
    fn same_seed_same_path() {
        let p = MarketParams::default();
        assert_eq!(
            simulate_path(&p, &Uniform, 9).unwrap(),
            simulate_path(&p, &Uniform, 9).unwrap()
        );
        assert_ne!(
            simulate_path(&p, &Uniform, 9).unwrap().shortfall,
            simulate_path(&p, &Uniform, 10).unwrap().shortfall
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let p = MarketParams {
            beta: 1.5,
            rho: -1.2,
            ..Default::default()
        };
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("beta") && msg.contains("rho"));
    }

    #[test]
    fn blow_up_is_reported() {
        let p = MarketParams {
            mu: 1e308,
            ..Default::default()
        };
        assert!(matches!(
            simulate_path(&p, &Uniform, 1),
            Err(Error::NonFiniteState { .. })
        ));
    }

    #[test]
    fn csv_header() {
        let p = MarketParams::default();
        let traj = simulate_path(&p, &Uniform, 2).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,t,S,V,q,x,nu,exec_price,cash\n"));
        assert_eq!(text.lines().count(), p.n_steps + 1);
    }
}
