//! Benchmark and expert execution strategies.
//!
//! Schedules are fixed share vectors; rate rules map the current state to a
//! selling rate `nu` and sell `min(q, nu dt)` shares per step. Every rule is a
//! [`TradingRule`], so the simulator's terminal liquidation applies uniformly.

pub mod rates;
pub mod riccati;
pub mod schedules;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{DecisionContext, MarketParams, TradingRule};
use crate::rng::SimRng;

pub use rates::{heston_optimal_rate, state_dependent_rate};
pub use riccati::{lq_feedback_rate, lq_riccati_solve, LqParams, RiccatiSolution};
pub use schedules::{ac_approx_schedule, twap_schedule, vwap_schedule, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Twap,
    Vwap,
    AcApprox,
    HestonOptimal,
    StateDependent,
    LqAc,
    Shortcut,
    Ppo,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Twap,
        Strategy::Vwap,
        Strategy::AcApprox,
        Strategy::HestonOptimal,
        Strategy::StateDependent,
        Strategy::LqAc,
        Strategy::Shortcut,
        Strategy::Ppo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Twap => "twap",
            Strategy::Vwap => "vwap",
            Strategy::AcApprox => "ac_approx",
            Strategy::HestonOptimal => "heston_optimal",
            Strategy::StateDependent => "state_dependent",
            Strategy::LqAc => "lq_ac",
            Strategy::Shortcut => "shortcut",
            Strategy::Ppo => "ppo",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Twap => "TWAP",
            Strategy::Vwap => "VWAP",
            Strategy::AcApprox => "AC-Approx",
            Strategy::HestonOptimal => "Heston-Optimal",
            Strategy::StateDependent => "State-Dependent",
            Strategy::LqAc => "LQ-AC",
            Strategy::Shortcut => "Shortcut",
            Strategy::Ppo => "PPO",
        }
    }

    /// Whether the strategy needs a trained checkpoint.
    pub fn is_learned(self) -> bool {
        matches!(self, Strategy::Shortcut | Strategy::Ppo)
    }

    pub fn valid_names() -> String {
        Strategy::ALL.map(Strategy::name).join(", ")
    }

    /// Builds the rule for an analytic strategy.
    pub fn analytic_rule(self, p: &MarketParams) -> Result<Box<dyn TradingRule>> {
        Ok(match self {
            Strategy::Twap => Box::new(ScheduleRule::new(twap_schedule(p))),
            Strategy::Vwap => Box::new(ScheduleRule::new(vwap_schedule(p))),
            Strategy::AcApprox => Box::new(ScheduleRule::new(ac_approx_schedule(p))),
            Strategy::HestonOptimal => Box::new(RateRule::HestonOptimal),
            Strategy::StateDependent => Box::new(RateRule::StateDependent),
            Strategy::LqAc => Box::new(LqRule::new(lq_riccati_solve(
                &LqParams::from_market(p),
                riccati::DEFAULT_GRID,
            )?)),
            Strategy::Shortcut | Strategy::Ppo => {
                return Err(Error::Config(format!(
                    "strategy '{}' needs a trained checkpoint",
                    self.name()
                )))
            }
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == key)
            .ok_or_else(|| Error::UnknownStrategy {
                name: s.to_string(),
                valid: Strategy::valid_names(),
            })
    }
}

/// Replays a fixed schedule step by step.
#[derive(Clone, Debug)]
pub struct ScheduleRule {
    pub schedule: Schedule,
}

impl ScheduleRule {
    pub fn new(schedule: Schedule) -> Self {
        ScheduleRule { schedule }
    }
}

impl TradingRule for ScheduleRule {
    fn shares(&self, ctx: &DecisionContext<'_>, _: &mut SimRng) -> f64 {
        self.schedule.shares_per_step.get(ctx.step).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateRule {
    HestonOptimal,
    StateDependent,
}

impl RateRule {
    pub fn rate(&self, ctx: &DecisionContext<'_>) -> f64 {
        match self {
            RateRule::HestonOptimal => heston_optimal_rate(&ctx.state, ctx.params),
            RateRule::StateDependent => state_dependent_rate(&ctx.state, ctx.params),
        }
    }
}

impl TradingRule for RateRule {
    fn shares(&self, ctx: &DecisionContext<'_>, _: &mut SimRng) -> f64 {
        (self.rate(ctx) * ctx.params.dt()).min(ctx.state.q)
    }
}

/// Linear state feedback from the Riccati gains.
#[derive(Clone, Debug)]
pub struct LqRule {
    pub solution: RiccatiSolution,
}

impl LqRule {
    pub fn new(solution: RiccatiSolution) -> Self {
        LqRule { solution }
    }
}

impl TradingRule for LqRule {
    fn shares(&self, ctx: &DecisionContext<'_>, _: &mut SimRng) -> f64 {
        let nu = lq_feedback_rate(&self.solution, ctx.state.t, ctx.state.q, ctx.state.s);
        (nu * ctx.params.dt()).min(ctx.state.q)
    }
}
