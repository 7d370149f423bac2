//! Riccati coefficients of the quadratic value function for the linear-quadratic
//! Almgren-Chriss problem, integrated backward from the horizon with RK4.
//!
//! With `V(t, S, q) = A q^2 + B S q + C S^2 + D`:
//!
//! ```text
//! A' = (2A + gB - g)^2 / (4h)                A(T) = 0
//! B' = (2A + gB - g)(B + 2gC) / (2h)         B(T) = -1
//! C' = -s^2 C + (B + 2gC)^2 / (4h)           C(T) = 0
//! D' = -s^2 C                                D(T) = 0
//! ```
//!
//! where `s` is the volatility, `g` the permanent and `h` the temporary impact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketParams;

use super::schedules::effective_linear_impact;

pub const DEFAULT_GRID: usize = 10_000;
pub const BLOW_UP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub sigma: f64,
    pub gamma_perm: f64,
    pub eta_temp: f64,
    pub horizon: f64,
    pub q0: f64,
}

impl LqParams {
    /// Long-run volatility `sqrt(theta)`, permanent impact `eta` and the
    /// linearised temporary coefficient of the power-law impact.
    ///
    /// `A` escapes to `-inf` roughly `eta_temp / gamma_perm` before the horizon,
    /// so for the benchmark scenarios the solve reports [`Error::BlowUp`].
    pub fn from_market(p: &MarketParams) -> Self {
        LqParams {
            sigma: p.theta.sqrt(),
            gamma_perm: p.eta,
            eta_temp: effective_linear_impact(p),
            horizon: p.horizon,
            q0: p.x0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_temp > 0.0) || self.gamma_perm < 0.0 || self.sigma < 0.0 || !(self.horizon > 0.0) {
            return Err(Error::InvalidParams(
                "LQ needs eta_temp > 0, gamma_perm >= 0, sigma >= 0, horizon > 0".into(),
            ));
        }
        Ok(())
    }

    /// Time derivative of `(A, B, C, D)`.
    pub fn rhs(&self, y: [f64; 4]) -> [f64; 4] {
        let [a, b, c, _] = y;
        let (g, h, s2) = (self.gamma_perm, self.eta_temp, self.sigma * self.sigma);
        let u = 2.0 * a + g * b - g;
        let w = b + 2.0 * g * c;
        [
            u * u / (4.0 * h),
            u * w / (2.0 * h),
            -s2 * c + w * w / (4.0 * h),
            -s2 * c,
        ]
    }

    pub fn gains(&self, y: [f64; 4]) -> (f64, f64) {
        let [a, b, c, _] = y;
        let (g, h) = (self.gamma_perm, self.eta_temp);
        ((2.0 * a + g * b - g) / (2.0 * h), (b + 2.0 * g * c) / (2.0 * h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub params: LqParams,
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

fn axpy(y: [f64; 4], h: f64, k: [f64; 4]) -> [f64; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

pub fn lq_riccati_solve(lq: &LqParams, grid_size: usize) -> Result<RiccatiSolution> {
    lq.validate()?;
    if grid_size < 100 {
        return Err(Error::InvalidParams("grid_size >= 100".into()));
    }
    let n = grid_size;
    let h = lq.horizon / n as f64;
    let mut ys = vec![[0.0; 4]; n + 1];
    ys[n] = [0.0, -1.0, 0.0, 0.0];
    for i in (0..n).rev() {
        let y = ys[i + 1];
        // Backward step: dt = -h.
        let k1 = lq.rhs(y);
        let k2 = lq.rhs(axpy(y, -0.5 * h, k1));
        let k3 = lq.rhs(axpy(y, -0.5 * h, k2));
        let k4 = lq.rhs(axpy(y, -h, k3));
        let next = [0, 1, 2, 3].map(|j| y[j] - h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        if next.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::BlowUp { t: i as f64 * h });
        }
        ys[i] = next;
    }
    let t: Vec<f64> = (0..=n)
        .map(|i| if i == n { lq.horizon } else { i as f64 * h })
        .collect();
    let (alpha1, alpha2): (Vec<f64>, Vec<f64>) = ys.iter().map(|y| lq.gains(*y)).unzip();
    Ok(RiccatiSolution {
        params: *lq,
        t,
        a: ys.iter().map(|y| y[0]).collect(),
        b: ys.iter().map(|y| y[1]).collect(),
        c: ys.iter().map(|y| y[2]).collect(),
        d: ys.iter().map(|y| y[3]).collect(),
        alpha1,
        alpha2,
    })
}

impl RiccatiSolution {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn coefficients(&self, i: usize) -> [f64; 4] {
        [self.a[i], self.b[i], self.c[i], self.d[i]]
    }

    fn interp(&self, series: &[f64], t: f64) -> f64 {
        let n = self.t.len() - 1;
        let h = self.params.horizon / n as f64;
        let x = (t / h).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        series[i] * (1.0 - w) + series[i + 1] * w
    }

    /// Linearly interpolated `(alpha1, alpha2)` at time `t`.
    pub fn gains_at(&self, t: f64) -> (f64, f64) {
        (self.interp(&self.alpha1, t), self.interp(&self.alpha2, t))
    }

    /// Largest absolute residual of the four ODEs at `samples` interior grid
    /// nodes, using a fourth-order central difference for the derivatives.
    pub fn max_residual(&self, samples: usize) -> f64 {
        let n = self.t.len() - 1;
        let h = self.params.horizon / n as f64;
        let mut worst: f64 = 0.0;
        for s in 0..samples {
            let i = 2 + s * (n - 4) / samples.max(1);
            let y = |j: usize| self.coefficients(j);
            let f = self.params.rhs(y(i));
            for k in 0..4 {
                let d = (-y(i + 2)[k] + 8.0 * y(i + 1)[k] - 8.0 * y(i - 1)[k] + y(i - 2)[k]) / (12.0 * h);
                worst = worst.max((d - f[k]).abs());
            }
        }
        worst
    }
}

/// `alpha1(t) q + alpha2(t) S`, floored at zero.
pub fn lq_feedback_rate(sol: &RiccatiSolution, t: f64, q: f64, s: f64) -> f64 {
    let (a1, a2) = sol.gains_at(t);
    (a1 * q + a2 * s).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stock() -> LqParams {
        LqParams {
            sigma: 0.3,
            gamma_perm: 2.5e-5,
            eta_temp: 1e-4,
            horizon: 1.0,
            q0: 10_000.0,
        }
    }

    #[test]
    fn terminal_slice_is_exact() {
        let sol = lq_riccati_solve(&stock(), DEFAULT_GRID).unwrap();
        let n = sol.len() - 1;
        assert_eq!(sol.coefficients(n), [0.0, -1.0, 0.0, 0.0]);
        assert_eq!(sol.t[n], 1.0);
    }

    #[test]
    fn residuals_small() {
        let sol = lq_riccati_solve(&stock(), DEFAULT_GRID).unwrap();
        let r = sol.max_residual(1000);
        assert!(r < 1e-6, "residual {r}");
    }

    #[test]
    fn gamma_zero_closed_form() {
        let lq = LqParams {
            gamma_perm: 0.0,
            ..stock()
        };
        let sol = lq_riccati_solve(&lq, DEFAULT_GRID).unwrap();
        let (h, s2) = (lq.eta_temp, lq.sigma * lq.sigma);
        for i in (0..sol.len()).step_by(97) {
            let tau = lq.horizon - sol.t[i];
            assert!(sol.a[i].abs() < 1e-9);
            assert!((sol.b[i] + 1.0).abs() < 1e-9);
            let c = (1.0 - (s2 * tau).exp()) / (4.0 * h * s2);
            let d = (tau - ((s2 * tau).exp() - 1.0) / s2) / (4.0 * h);
            assert!((sol.c[i] - c).abs() < 1e-9 * c.abs().max(1.0));
            assert!((sol.d[i] - d).abs() < 1e-9 * d.abs().max(1.0));
            assert!((sol.alpha2[i] + 1.0 / (2.0 * h)).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_converges() {
        let coarse = lq_riccati_solve(&stock(), DEFAULT_GRID).unwrap();
        let fine = lq_riccati_solve(&stock(), 2 * DEFAULT_GRID).unwrap();
        for i in 0..200 {
            let t = 0.00137 + i as f64 * 0.00499;
            let (a, b) = coarse.gains_at(t);
            let (c, d) = fine.gains_at(t);
            assert!((a - c).abs() < 1e-6 * c.abs().max(1.0), "t = {t}");
            assert!((b - d).abs() < 1e-6 * d.abs().max(1.0), "t = {t}");
        }
    }

    #[test]
    fn empty_inventory_clamps() {
        let sol = lq_riccati_solve(&stock(), 1000).unwrap();
        assert_eq!(lq_feedback_rate(&sol, 0.3, 0.0, 100.0), 0.0);
    }

    #[test]
    fn blow_up_reported() {
        let lq = LqParams {
            sigma: 1e4,
            ..stock()
        };
        assert!(matches!(lq_riccati_solve(&lq, 100), Err(Error::BlowUp { .. })));
        assert!(lq_riccati_solve(&stock(), 10).is_err());
    }
}
