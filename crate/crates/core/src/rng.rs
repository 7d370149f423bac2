//! Seeded random streams.
//!
//! Every Monte Carlo path owns a ChaCha8 stream keyed by `seed ^ path_index`, so a
//! single path can be regenerated in isolation and every strategy evaluated on a
//! path sees the same shocks. Market shocks come from stream 0 of that key; any
//! randomness a trading rule needs (flow-policy noise, PPO sampling) comes from
//! stream 1 so it never perturbs the market draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type SimRng = ChaCha8Rng;

const MARKET_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

/// Market-shock stream for one path.
pub fn path_rng(seed: u64, path_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ path_index);
    rng.set_stream(MARKET_STREAM);
    rng
}

/// Stream for randomized trading rules on one path.
pub fn policy_rng(seed: u64, path_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ path_index);
    rng.set_stream(POLICY_STREAM);
    rng
}

/// Seed for episode `episode` of grid cell `cell`. Injective for cell, episode < 2^32.
pub fn episode_seed(base: u64, cell: u32, episode: u32) -> u64 {
    base ^ (((cell as u64) << 32) | episode as u64)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `(z1, zv)` with unit marginals and correlation `rho`.
pub fn correlated_normals<R: Rng + ?Sized>(rng: &mut R, rho: f64) -> (f64, f64) {
    let z1 = standard_normal(rng);
    let z2 = standard_normal(rng);
    (z1, rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Path `i` draws its own stream.
    #[default]
    Independent,
    /// Paths `2j` and `2j + 1` share stream `j` with opposite signs.
    Antithetic,
}

/// Pre-drawn price/variance shocks for one path, one `(z1, zv)` pair per step.
#[derive(Clone, Debug, PartialEq)]
pub struct PathNoise {
    pub shocks: Vec<(f64, f64)>,
}

impl PathNoise {
    pub fn generate(seed: u64, path_index: u64, n_steps: usize, rho: f64, mode: NoiseMode) -> Self {
        let (stream, sign) = match mode {
            NoiseMode::Independent => (path_index, 1.0),
            NoiseMode::Antithetic => (path_index >> 1, if path_index & 1 == 1 { -1.0 } else { 1.0 }),
        };
        let mut rng = path_rng(seed, stream);
        let shocks = (0..n_steps)
            .map(|_| {
                let (z1, zv) = correlated_normals(&mut rng, rho);
                (sign * z1, sign * zv)
            })
            .collect();
        PathNoise { shocks }
    }

    pub fn len(&self) -> usize {
        self.shocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shocks.is_empty()
    }
}
