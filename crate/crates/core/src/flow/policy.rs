//! Few-step inference, checkpoints and rollouts for trained flow policies.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{normalize_obs, EnvConfig, ExecutionEnv, Observation};
use crate::error::{Error, Result};
use crate::market::{simulate_path, DecisionContext, MarketParams, TradingRule, Trajectory};
use crate::neural::checkpoint::Checkpoint;
use crate::neural::{Adam, Mlp};
use crate::rng::{policy_rng, standard_normal, SimRng};

use super::{input_row, AffineCodec, FlowConfig, INPUT_DIM};

pub const CHECKPOINT_KIND: &str = "flow_policy";

/// Anything that can be queried as `s(a, t, d | obs)`.
pub trait VelocityField {
    fn velocity(&self, a: f64, t: f64, d: f64, obs: &[f64; 4]) -> f64;
}

impl VelocityField for Mlp {
    fn velocity(&self, a: f64, t: f64, d: f64, obs: &[f64; 4]) -> f64 {
        self.predict(&input_row(obs, a, t, d)).expect("flow network input width")[0]
    }
}

/// Integrates `M` Euler steps of size `1/M` from `a0`, querying the field
/// exactly `M` times.
pub fn integrate<V: VelocityField + ?Sized>(field: &V, obs: &[f64; 4], m: usize, a0: f64) -> f64 {
    let d = 1.0 / m as f64;
    // a_k = a0 + acc; accumulating the increments keeps the telescoping sum
    // exact for constant fields.
    let mut acc = 0.0;
    for k in 0..m {
        acc += d * field.velocity(a0 + acc, k as f64 * d, d, obs);
    }
    a0 + acc
}

/// Draws `a0 ~ N(0, 1)` and integrates `m` steps. Result is in network space.
pub fn shortcut_infer<V: VelocityField + ?Sized>(field: &V, obs: &[f64; 4], m: usize, rng: &mut SimRng) -> f64 {
    let a0 = standard_normal(rng);
    integrate(field, obs, m.max(1), a0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPolicy {
    pub net: Mlp,
    pub obs_codec: AffineCodec,
    pub action_codec: AffineCodec,
    pub config: FlowConfig,
    pub adam: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct FlowMeta {
    obs_codec: AffineCodec,
    action_codec: AffineCodec,
    config: FlowConfig,
}

impl FlowPolicy {
    pub fn encode_obs(&self, obs: &Observation) -> [f64; 4] {
        let raw = obs.to_array();
        std::array::from_fn(|j| self.obs_codec.encode_at(j, raw[j]))
    }

    /// Liquidation fraction in `[0, 1]` for `obs` using `m` inference steps.
    pub fn act(&self, obs: &Observation, m: usize, rng: &mut SimRng) -> f64 {
        let z = shortcut_infer(&self.net, &self.encode_obs(obs), m, rng);
        let a = self.config.action_transform.inverse(self.action_codec.decode_at(0, z));
        if a.is_nan() {
            0.0
        } else {
            a.clamp(0.0, 1.0)
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(FlowMeta {
            obs_codec: self.obs_codec.clone(),
            action_codec: self.action_codec.clone(),
            config: self.config.clone(),
        })?;
        Ok(Checkpoint::new(CHECKPOINT_KIND, meta).with_net("velocity", &self.net, self.adam.as_ref()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("expected a {CHECKPOINT_KIND} checkpoint, found {}", ck.kind)));
        }
        let meta: FlowMeta = serde_json::from_value(ck.meta.clone())?;
        meta.obs_codec.validate()?;
        meta.action_codec.validate()?;
        let v = ck.net("velocity")?;
        if v.net.spec.input_dim() != INPUT_DIM || v.net.spec.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                expected: INPUT_DIM,
                got: v.net.spec.input_dim(),
            });
        }
        Ok(FlowPolicy {
            net: v.net.clone(),
            obs_codec: meta.obs_codec,
            action_codec: meta.action_codec,
            config: meta.config,
            adam: v.adam.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Sells `a q` shares where `a` is the policy's inferred fraction.
#[derive(Clone, Debug)]
pub struct FlowRule {
    pub policy: Arc<FlowPolicy>,
    pub steps: usize,
}

impl FlowRule {
    pub fn new(policy: Arc<FlowPolicy>, steps: usize) -> Self {
        FlowRule { policy, steps }
    }
}

impl TradingRule for FlowRule {
    fn shares(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> f64 {
        let obs = normalize_obs(&ctx.state, ctx.params);
        self.policy.act(&obs, self.steps, rng) * ctx.state.q
    }
}

/// One market-simulator path of `seed` under the policy.
pub fn rollout_market(policy: Arc<FlowPolicy>, p: &MarketParams, m: usize, seed: u64) -> Result<Trajectory> {
    simulate_path(p, &FlowRule::new(policy, m), seed)
}

/// One environment episode of `seed` under the policy.
pub fn rollout_env(policy: &FlowPolicy, cfg: &EnvConfig, m: usize, seed: u64) -> Result<Trajectory> {
    let mut env = ExecutionEnv::new(cfg.clone())?;
    let mut obs = env.reset(seed);
    let mut rng = policy_rng(seed, 0);
    while !env.is_done() {
        obs = env.step(policy.act(&obs, m, &mut rng))?.obs;
    }
    Ok(env.trajectory(seed))
}
