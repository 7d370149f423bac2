//! Precomputed share schedules: TWAP, U-shaped VWAP and the linearised
//! Almgren-Chriss trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketParams;

/// Below this `kappa T` the Almgren-Chriss trajectory is indistinguishable from TWAP.
pub const DEGENERATE_KAPPA_T: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub shares_per_step: Vec<f64>,
}

impl Schedule {
    /// Scales nonnegative weights to sum to `total`, putting the rounding
    /// remainder on the last entry.
    pub fn from_weights(weights: &[f64], total: f64) -> Self {
        let sum: f64 = weights.iter().sum();
        let mut shares: Vec<f64> = weights.iter().map(|w| total * w / sum).collect();
        fix_last(&mut shares, total);
        Schedule {
            shares_per_step: shares,
        }
    }

    pub fn len(&self) -> usize {
        self.shares_per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares_per_step.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.shares_per_step.iter().sum()
    }

    /// Remaining inventory before each step, starting at `x0`.
    pub fn inventory_path(&self, x0: f64) -> Vec<f64> {
        let mut q = x0;
        let mut out = Vec::with_capacity(self.len() + 1);
        out.push(q);
        for x in &self.shares_per_step {
            q -= x;
            out.push(q);
        }
        out
    }

    /// The schedule as fractions of the inventory remaining at each step.
    pub fn fractions(&self, x0: f64) -> Vec<f64> {
        let q = self.inventory_path(x0);
        self.shares_per_step
            .iter()
            .zip(&q)
            .map(|(x, q)| if *q > 0.0 { (x / q).clamp(0.0, 1.0) } else { 1.0 })
            .collect()
    }

    pub fn validate(&self, x0: f64) -> Result<()> {
        if self.shares_per_step.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidParams("schedule entries must be finite and >= 0".into()));
        }
        let total = self.total();
        if (total - x0).abs() > 1e-9 * x0 {
            return Err(Error::InvalidParams(format!("schedule sums to {total}, expected {x0}")));
        }
        Ok(())
    }
}

fn fix_last(shares: &mut [f64], total: f64) {
    if let Some((last, head)) = shares.split_last_mut() {
        let head_sum: f64 = head.iter().sum();
        *last = (total - head_sum).max(0.0);
    }
}

pub fn twap_schedule(p: &MarketParams) -> Schedule {
    Schedule::from_weights(&vec![1.0; p.n_steps], p.x0)
}

/// Unnormalised U-shaped volume weight at step `k`.
pub fn vwap_weight(k: usize, n: usize) -> f64 {
    let u = k as f64 / n as f64 - 0.5;
    2.5 * u * u + 0.5
}

pub fn vwap_schedule(p: &MarketParams) -> Schedule {
    let w: Vec<f64> = (0..p.n_steps).map(|k| vwap_weight(k, p.n_steps)).collect();
    Schedule::from_weights(&w, p.x0)
}

/// `epsilon (X0/T)^(beta-1)`: the linear coefficient matching the power-law
/// impact at the TWAP rate.
pub fn effective_linear_impact(p: &MarketParams) -> f64 {
    p.epsilon * (p.x0 / p.horizon).powf(p.beta - 1.0)
}

/// Urgency `sqrt(lambda theta / eps_eff)`; zero when there is no impact.
pub fn ac_kappa(p: &MarketParams) -> f64 {
    let eps = effective_linear_impact(p);
    if eps <= 0.0 {
        return f64::INFINITY;
    }
    (p.lambda * p.theta / eps).sqrt()
}

/// `sinh(a) / sinh(b)` for `0 <= a <= b`, without overflow for large arguments.
fn sinh_ratio(a: f64, b: f64) -> f64 {
    if b > 20.0 {
        (a - b).exp() * (-(-2.0 * a).exp_m1()) / (-(-2.0 * b).exp_m1())
    } else {
        a.sinh() / b.sinh()
    }
}

/// Inventory `q(t) = X0 sinh(kappa (T - t)) / sinh(kappa T)` on the step grid.
pub fn ac_inventory(p: &MarketParams) -> Vec<f64> {
    let kappa = ac_kappa(p);
    let kt = kappa * p.horizon;
    (0..=p.n_steps)
        .map(|k| {
            let tau = p.horizon - p.time(k);
            if kt < DEGENERATE_KAPPA_T {
                p.x0 * tau / p.horizon
            } else if kt.is_infinite() {
                if k == 0 {
                    p.x0
                } else {
                    0.0
                }
            } else {
                p.x0 * sinh_ratio(kappa * tau, kt)
            }
        })
        .collect()
}

pub fn ac_approx_schedule(p: &MarketParams) -> Schedule {
    if ac_kappa(p) * p.horizon < DEGENERATE_KAPPA_T {
        return twap_schedule(p);
    }
    let q = ac_inventory(p);
    let mut shares: Vec<f64> = q.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect();
    fix_last(&mut shares, p.x0);
    Schedule {
        shares_per_step: shares,
    }
}
