//! State-feedback trading rates for Heston markets.

use crate::market::{MarketParams, PathState};

pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Fraction of the horizon over which the Heston-optimal rate is blended into
/// uniform liquidation.
pub const TERMINAL_BLEND: f64 = 0.05;

/// `E[V_T | V_t]` under mean reversion.
pub fn expected_terminal_variance(v: f64, tau: f64, p: &MarketParams) -> f64 {
    p.theta + (v - p.theta) * (-p.kappa * tau).exp()
}

/// Unblended Heston-optimal rate `(1+beta) q/tau (sqrt(E[V_T|V]) / sqrt(V))^(1/2)`.
pub fn heston_optimal_core(q: f64, v: f64, tau: f64, p: &MarketParams) -> f64 {
    let v = v.max(VARIANCE_FLOOR);
    let ratio = expected_terminal_variance(v, tau, p).max(0.0).sqrt() / v.sqrt();
    (1.0 + p.beta) * q / tau * ratio.sqrt()
}

/// Heston-optimal selling rate, blended towards `q / tau` over the last 5% of the horizon.
pub fn heston_optimal_rate(state: &PathState, p: &MarketParams) -> f64 {
    let tau = p.horizon - state.t;
    if tau <= 0.0 || state.q <= 0.0 {
        return 0.0;
    }
    let core = heston_optimal_core(state.q, state.v, tau, p);
    let window = TERMINAL_BLEND * p.horizon;
    let rate = if tau < window {
        let alpha = tau / window;
        alpha * core + (1.0 - alpha) * state.q / tau
    } else {
        core
    };
    rate.max(0.0)
}

pub fn volatility_adjustment(v: f64, tau: f64, p: &MarketParams) -> f64 {
    let v = v.max(VARIANCE_FLOOR);
    (expected_terminal_variance(v, tau, p).max(0.0) / v).sqrt()
}

pub fn urgency(tau: f64) -> f64 {
    (1.0 / tau).min(2.0)
}

/// `Phi * Psi * Omega` with `Phi = (q/tau)^(1/(1+beta))`.
pub fn state_dependent_rate(state: &PathState, p: &MarketParams) -> f64 {
    let tau = p.horizon - state.t;
    if tau <= 0.0 || state.q <= 0.0 {
        return 0.0;
    }
    let base = (state.q / tau).powf(1.0 / (1.0 + p.beta));
    (base * volatility_adjustment(state.v, tau, p) * urgency(tau)).max(0.0)
}
