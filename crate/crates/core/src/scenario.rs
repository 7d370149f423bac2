//! The four benchmark market regimes: high/low volatility crossed with
//! high/low impact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioLabel {
    HH,
    HL,
    LH,
    LL,
}

const HIGH_VAR: f64 = 0.16;
const LOW_VAR: f64 = 0.04;
const HIGH_IMPACT: (f64, f64) = (5e-5, 1e-4);
const LOW_IMPACT: (f64, f64) = (1e-5, 2e-5);

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 4] = [ScenarioLabel::HH, ScenarioLabel::HL, ScenarioLabel::LH, ScenarioLabel::LL];

    pub fn high_vol(self) -> bool {
        matches!(self, ScenarioLabel::HH | ScenarioLabel::HL)
    }

    pub fn high_impact(self) -> bool {
        matches!(self, ScenarioLabel::HH | ScenarioLabel::LH)
    }

    pub fn from_levels(high_vol: bool, high_impact: bool) -> Self {
        match (high_vol, high_impact) {
            (true, true) => ScenarioLabel::HH,
            (true, false) => ScenarioLabel::HL,
            (false, true) => ScenarioLabel::LH,
            (false, false) => ScenarioLabel::LL,
        }
    }

    /// Scenario parameters at impact exponent `beta`.
    pub fn params(self, beta: f64) -> MarketParams {
        let var = if self.high_vol() { HIGH_VAR } else { LOW_VAR };
        let (eta, epsilon) = if self.high_impact() { HIGH_IMPACT } else { LOW_IMPACT };
        MarketParams {
            mu: 0.0,
            kappa: 2.0,
            theta: var,
            v0: var,
            xi: if self.high_vol() { 0.5 } else { 0.2 },
            rho: -0.7,
            eta,
            epsilon,
            beta,
            lambda: 1e-5,
            ..MarketParams::default()
        }
    }

    /// Nearest regime in log distance of `V0` and `(eta, epsilon)`.
    pub fn nearest(p: &MarketParams) -> Self {
        let dist = |a: f64, b: f64| (a.max(1e-300).ln() - b.ln()).abs();
        let high_vol = dist(p.v0, HIGH_VAR) <= dist(p.v0, LOW_VAR);
        let hi = dist(p.eta, HIGH_IMPACT.0) + dist(p.epsilon, HIGH_IMPACT.1);
        let lo = dist(p.eta, LOW_IMPACT.0) + dist(p.epsilon, LOW_IMPACT.1);
        ScenarioLabel::from_levels(high_vol, hi <= lo)
    }

    /// Other labels ordered by similarity: same volatility level first, then
    /// same impact level, then the opposite corner.
    pub fn fallbacks(self) -> [ScenarioLabel; 3] {
        let (v, i) = (self.high_vol(), self.high_impact());
        [
            ScenarioLabel::from_levels(v, !i),
            ScenarioLabel::from_levels(!v, i),
            ScenarioLabel::from_levels(!v, !i),
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioLabel::HH => "HH",
            ScenarioLabel::HL => "HL",
            ScenarioLabel::LH => "LH",
            ScenarioLabel::LL => "LL",
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'; valid: HH, HL, LH, LL")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let hh = ScenarioLabel::HH.params(0.5);
        assert_eq!((hh.v0, hh.theta, hh.xi, hh.eta, hh.epsilon), (0.16, 0.16, 0.5, 5e-5, 1e-4));
        let ll = ScenarioLabel::LL.params(0.8);
        assert_eq!((ll.v0, ll.theta, ll.xi, ll.eta, ll.epsilon, ll.beta), (0.04, 0.04, 0.2, 1e-5, 2e-5, 0.8));
        for l in ScenarioLabel::ALL {
            assert_eq!(ScenarioLabel::nearest(&l.params(0.5)), l);
            assert_eq!(l.name().parse::<ScenarioLabel>().unwrap(), l);
        }
    }

    #[test]
    fn nearest_for_grid_cells() {
        let p = MarketParams {
            v0: 0.09,
            eta: 2.5e-5,
            epsilon: 5e-5,
            ..Default::default()
        };
        // sqrt(V0) = 0.3 is log-closer to 0.4 than to 0.2, and (2.5e-5, 5e-5)
        // is log-closer to the high impact pair.
        assert_eq!(ScenarioLabel::nearest(&p), ScenarioLabel::HH);
        assert_eq!(
            ScenarioLabel::HH.fallbacks(),
            [ScenarioLabel::HL, ScenarioLabel::LH, ScenarioLabel::LL]
        );
    }
}
