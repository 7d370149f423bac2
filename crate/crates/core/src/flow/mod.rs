//! Shortcut flow-matching policy.
//!
//! A velocity network `s(a, t, d | obs)` is trained on expert (observation,
//! action) pairs. Most rows in a batch regress the straight-line velocity
//! `x1 - x0` with `d = 0`; the rest are trained to make one step of size `2d`
//! agree with two steps of size `d` (self-consistency). At inference a handful
//! of Euler steps from Gaussian noise produce the action.
//!
//! Actions are per-step liquidation fractions `x_k / q_k` in `[0, 1]`.

mod policy;
mod train;

pub use policy::{integrate, rollout_env, rollout_market, shortcut_infer, FlowPolicy, FlowRule, VelocityField};
pub use train::{
    mse_loss_and_grad, sample_batch, sample_dt_pair, shortcut_loss_and_grad, shortcut_train_step, train_flow, FlowConfig,
    FlowData, FlowSample, TrainLog,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of dyadic step-size levels: `d` in `{1/128, ..., 1/2}`.
pub const DT_LEVELS: u32 = 7;
pub const D_MIN: f64 = 1.0 / 128.0;
/// Observation channels (4) + action + t + d + log2(1/d) + (d == 0) flag.
pub const INPUT_DIM: usize = 9;

/// Elementwise map applied to actions before the affine codec.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTransform {
    Identity,
    /// `ln(a / (1 - a))` on fractions clipped to `[LOGIT_CLIP, 1 - LOGIT_CLIP]`.
    #[default]
    Logit,
}

pub const LOGIT_CLIP: f64 = 1e-4;

impl ActionTransform {
    pub fn forward(self, a: f64) -> f64 {
        match self {
            ActionTransform::Identity => a,
            ActionTransform::Logit => {
                let a = a.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
                (a / (1.0 - a)).ln()
            }
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            ActionTransform::Identity => y,
            ActionTransform::Logit => 1.0 / (1.0 + (-y).exp()),
        }
    }
}

/// Per-channel affine normalisation `z = (x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCodec {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineCodec {
    pub fn identity(dim: usize) -> Self {
        AffineCodec {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column statistics of `rows`, with scales floored at `min_scale`.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize, min_scale: f64) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            n += 1;
            for j in 0..dim {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        if n == 0 {
            return Err(Error::InvalidParams("cannot fit a codec on no data".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale = (0..dim)
            .map(|j| ((sq[j] / n as f64 - mean[j] * mean[j]).max(0.0)).sqrt().max(min_scale))
            .collect();
        Ok(AffineCodec { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.scale.len() || self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParams("codec scales must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn encode_at(&self, j: usize, x: f64) -> f64 {
        (x - self.mean[j]) / self.scale[j]
    }

    pub fn decode_at(&self, j: usize, z: f64) -> f64 {
        z * self.scale[j] + self.mean[j]
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| self.encode_at(j, *v)).collect()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(j, v)| self.decode_at(j, *v)).collect()
    }
}

/// Network input for one query.
pub fn input_row(obs: &[f64; 4], a: f64, t: f64, d: f64) -> [f64; INPUT_DIM] {
    let (log_inv, flag) = if d > 0.0 { ((1.0 / d).log2(), 0.0) } else { (0.0, 1.0) };
    [obs[0], obs[1], obs[2], obs[3], a, t, d.min(1.0), log_inv, flag]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codec_round_trip() {
        let rows = [vec![0.1, 5.0], vec![0.3, 7.0], vec![0.2, 9.0]];
        let c = AffineCodec::fit(rows.iter().map(|r| r.as_slice()), 2, 1e-6).unwrap();
        for r in &rows {
            let back = c.decode(&c.encode(r));
            for j in 0..2 {
                assert!((back[j] - r[j]).abs() < 1e-9);
            }
        }
        let z = c.encode(&[0.2, 7.0]);
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let flat = AffineCodec::fit([vec![1.0], vec![1.0]].iter().map(|r| r.as_slice()), 1, 1e-3).unwrap();
        assert_eq!(flat.scale, vec![1e-3]);
    }

    #[test]
    fn logit_round_trip() {
        for a in [1e-3, 0.015, 0.3, 0.5, 0.97] {
            let t = ActionTransform::Logit;
            assert!((t.inverse(t.forward(a)) - a).abs() < 1e-12);
        }
        assert_eq!(ActionTransform::Identity.forward(0.3), 0.3);
    }

    #[test]
    fn input_encoding() {
        let obs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(input_row(&obs, 0.5, 0.25, 0.0)[4..], [0.5, 0.25, 0.0, 0.0, 1.0]);
        assert_eq!(input_row(&obs, 0.5, 0.25, 0.125)[6..], [0.125, 3.0, 0.0]);
        assert_eq!(input_row(&obs, 0.0, 0.0, 2.0)[6..], [1.0, -1.0, 0.0]);
    }
}
