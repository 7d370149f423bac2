//! Clipped-surrogate PPO for the execution environment.
//!
//! The actor outputs the mean of a Gaussian over an unbounded pre-action `u`
//! with a state-independent log standard deviation. The environment receives
//! the logistic squash `a = 1 / (1 + e^-u)`, so actions are valid fractions
//! without clamping. Log-probabilities include the squash Jacobian.

mod registry;

pub use registry::PpoRegistry;

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{normalize_obs, EnvConfig, ExecutionEnv, Observation};
use crate::error::{Error, Result};
use crate::flow::AffineCodec;
use crate::market::{DecisionContext, MarketParams, TradingRule};
use crate::neural::checkpoint::Checkpoint;
use crate::neural::{adam_update, clip_grad_norm, Adam, AdamConfig, Mlp, NetSpec};
use crate::rng::{episode_seed, path_rng, standard_normal, SimRng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const CHECKPOINT_KIND: &str = "ppo_policy";
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub steps_per_rollout: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub total_steps: usize,
    pub target_kl: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub depth: usize,
    /// Liquidation fraction the untrained actor's mean maps to.
    pub init_action: f64,
    pub init_log_std: f64,
    /// Validate every this many rollouts.
    pub eval_every: usize,
    pub val_episodes: usize,
    pub val_seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_ratio: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch_size: 256,
            steps_per_rollout: 2048,
            entropy_coef: 0.0,
            value_coef: 0.5,
            lr: 3e-4,
            total_steps: 200_000,
            target_kl: 0.02,
            max_grad_norm: 0.5,
            hidden: 64,
            depth: 2,
            init_action: 0.02,
            init_log_std: -0.5,
            eval_every: 5,
            val_episodes: 64,
            val_seed: 1_000_003,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.clip_ratio > 0.0
            && self.clip_ratio < 1.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.epochs >= 1
            && self.minibatch_size >= 1
            && self.steps_per_rollout >= 1
            && self.lr > 0.0
            && self.init_action > 0.0
            && self.init_action < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(
                "PPO config needs clip in (0,1), gamma in (0,1], gae_lambda in [0,1], positive sizes and lr".into(),
            ))
        }
    }
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

pub fn logit(a: f64) -> f64 {
    (a / (1.0 - a)).ln()
}

/// `ln(sigmoid'(u)) = -softplus(-u) - softplus(u)`, stable for large `|u|`.
fn log_squash_jacobian(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    -softplus(-u) - softplus(u)
}

/// Log-density of the squashed action whose pre-image is `u`.
pub fn log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI - log_squash_jacobian(u)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: f64,
    pub obs_codec: AffineCodec,
}

impl GaussianPolicy {
    /// Observation codec centred on the market's initial state.
    pub fn obs_codec_for(p: &MarketParams) -> AffineCodec {
        AffineCodec {
            mean: vec![0.5, 0.5, p.s0.ln(), 0.5 * p.v0.max(1e-12).ln()],
            scale: vec![0.29, 0.29, 0.25, 0.5],
        }
    }

    pub fn new(cfg: &PpoConfig, p: &MarketParams, rng: &mut SimRng) -> Self {
        let mut actor = Mlp::init(NetSpec::mlp(4, cfg.hidden, cfg.depth, 1), rng, 0.01);
        let last = actor.spec.n_layers() - 1;
        actor.bias_mut(last)[0] = logit(cfg.init_action);
        let critic = Mlp::init(NetSpec::mlp(4, cfg.hidden, cfg.depth, 1), rng, 1.0);
        GaussianPolicy {
            actor,
            critic,
            log_std: cfg.init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
            obs_codec: Self::obs_codec_for(p),
        }
    }

    pub fn encode(&self, obs: &Observation) -> [f64; 4] {
        let raw = obs.to_array();
        std::array::from_fn(|j| self.obs_codec.encode_at(j, raw[j]))
    }

    pub fn mean(&self, x: &[f64; 4]) -> f64 {
        self.actor.predict(x).expect("actor input width")[0]
    }

    pub fn value(&self, x: &[f64; 4]) -> f64 {
        self.critic.predict(x).expect("critic input width")[0]
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    /// Samples `(u, log_prob)` for an encoded observation.
    pub fn sample(&self, x: &[f64; 4], rng: &mut SimRng) -> (f64, f64) {
        let mean = self.mean(x);
        let u = mean + self.std() * standard_normal(rng);
        (u, log_prob(u, mean, self.log_std))
    }

    /// The squashed mean action.
    pub fn deterministic_action(&self, obs: &Observation) -> f64 {
        sigmoid(self.mean(&self.encode(obs)))
    }

    pub fn quantize(&mut self) {
        self.actor.quantize();
        self.critic.quantize();
        self.log_std = self.log_std as f32 as f64;
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let meta = serde_json::json!({ "obs_codec": self.obs_codec, "info": meta });
        Ok(Checkpoint::new(CHECKPOINT_KIND, meta)
            .with_net("actor", &self.actor, None)
            .with_net("critic", &self.critic, None)
            .with_tensor("log_std", vec![self.log_std]))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("expected a {CHECKPOINT_KIND} checkpoint, found {}", ck.kind)));
        }
        let obs_codec: AffineCodec = serde_json::from_value(ck.meta["obs_codec"].clone())?;
        obs_codec.validate()?;
        let log_std = *ck
            .tensor("log_std")?
            .first()
            .ok_or_else(|| Error::Format("empty log_std".into()))?;
        Ok(GaussianPolicy {
            actor: ck.net("actor")?.net.clone(),
            critic: ck.net("critic")?.net.clone(),
            log_std,
            obs_codec,
        })
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        self.to_checkpoint(meta)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// On-policy samples. `obs` rows are encoded observations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub obs: Vec<[f64; 4]>,
    pub u: Vec<f64>,
    pub logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the observation following the last row (0 if it ended an episode).
    pub last_value: f64,
    /// Total rewards of episodes completed during this rollout.
    pub episode_returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Steps one environment across rollouts, resetting with fresh seeds as
/// episodes end.
pub struct RolloutWorker {
    env: ExecutionEnv,
    obs: Observation,
    seed_base: u64,
    episode: u32,
    ep_return: f64,
}

impl RolloutWorker {
    pub fn new(cfg: &EnvConfig, seed_base: u64) -> Result<Self> {
        let mut env = ExecutionEnv::new(cfg.clone())?;
        let obs = env.reset(episode_seed(seed_base, 0, 0));
        Ok(RolloutWorker {
            env,
            obs,
            seed_base,
            episode: 0,
            ep_return: 0.0,
        })
    }

    pub fn env(&self) -> &ExecutionEnv {
        &self.env
    }

    /// Collects exactly `steps` transitions.
    pub fn collect(&mut self, policy: &GaussianPolicy, steps: usize, rng: &mut SimRng) -> Result<Batch> {
        let mut b = Batch::default();
        for _ in 0..steps {
            let x = policy.encode(&self.obs);
            let (u, logp) = policy.sample(&x, rng);
            let value = policy.value(&x);
            let r = self.env.step(sigmoid(u))?;
            b.obs.push(x);
            b.u.push(u);
            b.logp.push(logp);
            b.rewards.push(r.reward);
            b.values.push(value);
            b.dones.push(r.done);
            self.ep_return += r.reward;
            if r.done {
                b.episode_returns.push(self.ep_return);
                self.ep_return = 0.0;
                self.episode += 1;
                self.obs = self.env.reset(episode_seed(self.seed_base, 0, self.episode));
            } else {
                self.obs = r.obs;
            }
        }
        b.last_value = if b.dones.last().copied().unwrap_or(true) {
            0.0
        } else {
            policy.value(&policy.encode(&self.obs))
        };
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gae {
    pub advantages: Vec<f64>,
    /// Advantages scaled to zero mean and unit variance.
    pub normalized: Vec<f64>,
    pub returns: Vec<f64>,
}

pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lam: f64,
) -> Gae {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    let mean = adv.iter().sum::<f64>() / n.max(1) as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let sd = var.sqrt().max(1e-8);
    let normalized = adv.iter().map(|a| (a - mean) / sd).collect();
    Gae {
        advantages: adv,
        normalized,
        returns,
    }
}

/// Per-sample clipped objective `min(r A, clip(r, 1-c, 1+c) A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateGrad {
    /// `-mean(surrogate) - entropy_coef * entropy`.
    pub loss: f64,
    pub actor: Vec<f64>,
    pub log_std: f64,
    /// `mean(logp_old - logp_new)`.
    pub kl: f64,
}

/// Stacks encoded observations into a `(n, 4)` matrix.
pub fn obs_matrix(obs: &[[f64; 4]]) -> Array2<f64> {
    Array2::from_shape_vec((obs.len(), 4), obs.iter().flatten().copied().collect()).unwrap()
}

/// Policy loss and its gradient with respect to the actor parameters and log-std.
pub fn surrogate_loss_and_grad(
    policy: &GaussianPolicy,
    obs: ArrayView2<'_, f64>,
    u: &[f64],
    logp_old: &[f64],
    adv: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> Result<SurrogateGrad> {
    let n = u.len() as f64;
    let cache = policy.actor.forward_batch(obs)?;
    let means = cache.output();
    let inv_var = (-2.0 * policy.log_std).exp();
    let mut gmean = Array2::zeros(means.dim());
    let mut glog_std = 0.0;
    let mut loss = 0.0;
    let mut kl = 0.0;
    for i in 0..u.len() {
        let mean = means[[i, 0]];
        let lp = log_prob(u[i], mean, policy.log_std);
        let ratio = (lp - logp_old[i]).exp();
        loss -= clipped_surrogate(ratio, adv[i], clip);
        kl += logp_old[i] - lp;
        let clipped = (adv[i] >= 0.0 && ratio > 1.0 + clip) || (adv[i] < 0.0 && ratio < 1.0 - clip);
        if !clipped {
            // d(-r A) = -r A dlogp
            let w = -ratio * adv[i] / n;
            let r = u[i] - mean;
            gmean[[i, 0]] = w * r * inv_var;
            glog_std += w * (r * r * inv_var - 1.0);
        }
    }
    // Entropy of the Gaussian is log_std + const.
    loss = loss / n - entropy_coef * (policy.log_std + 0.5 * (LN_2PI + 1.0));
    glog_std -= entropy_coef;
    let actor = policy.actor.backward(&cache, gmean.view())?;
    Ok(SurrogateGrad {
        loss,
        actor,
        log_std: glog_std,
        kl: kl / n,
    })
}

/// Critic loss `mean((V - R)^2)` and the gradient of `value_coef` times it.
pub fn value_loss_and_grad(
    critic: &Mlp,
    obs: ArrayView2<'_, f64>,
    returns: &[f64],
    value_coef: f64,
) -> Result<(f64, Vec<f64>)> {
    let cache = critic.forward_batch(obs)?;
    let v = cache.output();
    let m = returns.len() as f64;
    let mut gv = Array2::zeros(v.dim());
    let mut loss = 0.0;
    for (i, r) in returns.iter().enumerate() {
        let e = v[[i, 0]] - r;
        loss += e * e / m;
        gv[[i, 0]] = value_coef * 2.0 * e / m;
    }
    Ok((loss, critic.backward(&cache, gv.view())?))
}

/// Optimizer state for the actor, critic and log-std.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoOptimizer {
    pub actor: Adam,
    pub critic: Adam,
    pub log_std: Adam,
}

impl PpoOptimizer {
    pub fn new(policy: &GaussianPolicy) -> Self {
        PpoOptimizer {
            actor: Adam::new(policy.actor.n_params()),
            critic: Adam::new(policy.critic.n_params()),
            log_std: Adam::new(1),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub epochs_run: usize,
}

/// Clipped-surrogate epochs over `batch`, stopping early once the
/// pre-update KL estimate of a minibatch exceeds `target_kl`.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    opt: &mut PpoOptimizer,
    batch: &Batch,
    gae: &Gae,
    cfg: &PpoConfig,
    rng: &mut SimRng,
) -> Result<UpdateStats> {
    let adam = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut n_mb = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch_size) {
            let obs: Vec<[f64; 4]> = chunk.iter().map(|&i| batch.obs[i]).collect();
            let x = obs_matrix(&obs);
            let u: Vec<f64> = chunk.iter().map(|&i| batch.u[i]).collect();
            let lp: Vec<f64> = chunk.iter().map(|&i| batch.logp[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| gae.normalized[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| gae.returns[i]).collect();

            let mut g = surrogate_loss_and_grad(policy, x.view(), &u, &lp, &adv, cfg.clip_ratio, cfg.entropy_coef)?;
            if g.kl > cfg.target_kl {
                stats.kl = g.kl;
                stats.epochs_run = epoch;
                break 'epochs;
            }
            let (vloss, mut gcritic) = value_loss_and_grad(&policy.critic, x.view(), &ret, cfg.value_coef)?;
            if !(g.loss.is_finite() && vloss.is_finite()) {
                return Err(Error::Divergence(format!("PPO losses {} / {vloss}", g.loss)));
            }
            clip_grad_norm(&mut g.actor, cfg.max_grad_norm);
            clip_grad_norm(&mut gcritic, cfg.max_grad_norm);
            adam_update(&mut policy.actor.params, &mut opt.actor, &g.actor, &adam)?;
            adam_update(&mut policy.critic.params, &mut opt.critic, &gcritic, &adam)?;
            let mut ls = [policy.log_std];
            adam_update(&mut ls, &mut opt.log_std, &[g.log_std], &adam)?;
            policy.log_std = ls[0].clamp(LOG_STD_MIN, LOG_STD_MAX);

            stats.policy_loss += g.loss;
            stats.value_loss += vloss;
            stats.kl = g.kl;
            n_mb += 1;
        }
        stats.epochs_run = epoch + 1;
    }
    if n_mb > 0 {
        stats.policy_loss /= n_mb as f64;
        stats.value_loss /= n_mb as f64;
    }
    Ok(stats)
}

/// Total reward of one episode per seed, with actions from `action(obs, step)`.
pub fn episode_rewards<F>(cfg: &EnvConfig, seeds: &[u64], mut action: F) -> Result<Vec<f64>>
where
    F: FnMut(&Observation, usize) -> f64,
{
    let mut env = ExecutionEnv::new(cfg.clone())?;
    seeds
        .iter()
        .map(|&s| {
            let mut obs = env.reset(s);
            let mut total = 0.0;
            while !env.is_done() {
                let r = env.step(action(&obs, env.step_index()))?;
                total += r.reward;
                obs = r.obs;
            }
            Ok(total)
        })
        .collect()
}

/// Total reward of one deterministic-policy episode per seed.
pub fn evaluate_env(policy: &GaussianPolicy, cfg: &EnvConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    episode_rewards(cfg, seeds, |obs, _| policy.deterministic_action(obs))
}

/// Per-episode rewards of the uniform schedule, selling `1/(N-k)` of what is left.
pub fn twap_env_rewards(cfg: &EnvConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    let n = cfg.market.n_steps;
    episode_rewards(cfg, seeds, |_, k| 1.0 / (n - k) as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoIteration {
    pub env_steps: usize,
    pub mean_episode_reward: f64,
    pub validation_reward: Option<f64>,
    pub stats: UpdateStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLog {
    pub iterations: Vec<PpoIteration>,
    pub best_validation_reward: f64,
    pub best_env_steps: usize,
}

/// Trains for `cfg.total_steps` environment steps and returns the
/// best-validating snapshot (weights rounded to `f32`).
pub fn train_ppo(cfg: &PpoConfig, env_cfg: &EnvConfig, seed: u64) -> Result<(GaussianPolicy, PpoLog)> {
    cfg.validate()?;
    env_cfg.validate()?;
    let mut init_rng = path_rng(seed, 0);
    let mut policy = GaussianPolicy::new(cfg, &env_cfg.market, &mut init_rng);
    let mut opt = PpoOptimizer::new(&policy);
    let mut rng = path_rng(seed, 1);
    let mut worker = RolloutWorker::new(env_cfg, seed)?;
    let val_seeds: Vec<u64> = (0..cfg.val_episodes as u64).map(|i| cfg.val_seed ^ i).collect();

    let validate = |p: &GaussianPolicy| -> Result<(GaussianPolicy, f64)> {
        let mut snap = p.clone();
        snap.quantize();
        let r = evaluate_env(&snap, env_cfg, &val_seeds)?;
        let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
        Ok((snap, mean))
    };
    let (mut best, mut best_score) = validate(&policy)?;
    let mut log = PpoLog {
        best_validation_reward: best_score,
        ..Default::default()
    };

    let iters = cfg.total_steps.div_ceil(cfg.steps_per_rollout);
    for it in 1..=iters {
        let batch = worker.collect(&policy, cfg.steps_per_rollout, &mut rng)?;
        let gae = gae_advantages(
            &batch.rewards,
            &batch.values,
            &batch.dones,
            batch.last_value,
            cfg.gamma,
            cfg.gae_lambda,
        );
        let stats = ppo_update(&mut policy, &mut opt, &batch, &gae, cfg, &mut rng)?;
        let mean_ep = if batch.episode_returns.is_empty() {
            f64::NAN
        } else {
            batch.episode_returns.iter().sum::<f64>() / batch.episode_returns.len() as f64
        };
        if !batch.episode_returns.is_empty() && !mean_ep.is_finite() {
            return Err(Error::Divergence(format!("mean episode reward is {mean_ep}")));
        }
        let mut entry = PpoIteration {
            env_steps: it * cfg.steps_per_rollout,
            mean_episode_reward: mean_ep,
            validation_reward: None,
            stats,
        };
        if it % cfg.eval_every.max(1) == 0 || it == iters {
            let (snap, score) = validate(&policy)?;
            entry.validation_reward = Some(score);
            if score > best_score {
                best = snap;
                best_score = score;
                log.best_validation_reward = score;
                log.best_env_steps = entry.env_steps;
            }
        }
        log::info!(
            "ppo iter {it}/{iters}: episode reward {:.5}, kl {:.4}, val {:?}",
            entry.mean_episode_reward,
            entry.stats.kl,
            entry.validation_reward
        );
        log.iterations.push(entry);
    }
    Ok((best, log))
}

/// Trading rule selling the policy's fraction of the remaining inventory.
#[derive(Clone, Debug)]
pub struct PpoRule {
    pub policy: Arc<GaussianPolicy>,
    /// Sample actions instead of using the squashed mean.
    pub stochastic: bool,
}

impl PpoRule {
    pub fn new(policy: Arc<GaussianPolicy>) -> Self {
        PpoRule {
            policy,
            stochastic: false,
        }
    }
}

impl TradingRule for PpoRule {
    fn shares(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> f64 {
        let obs = normalize_obs(&ctx.state, ctx.params);
        let a = if self.stochastic {
            sigmoid(self.policy.sample(&self.policy.encode(&obs), rng).0)
        } else {
            self.policy.deterministic_action(&obs)
        };
        a * ctx.state.q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_policy(seed: u64) -> GaussianPolicy {
        let cfg = PpoConfig {
            hidden: 8,
            ..Default::default()
        };
        GaussianPolicy::new(&cfg, &MarketParams::default(), &mut path_rng(seed, 0))
    }

    #[test]
    fn initial_action_and_logprob() {
        let p = small_policy(1);
        let obs = normalize_obs(&crate::market::PathState::initial(&MarketParams::default()), &MarketParams::default());
        assert!((p.deterministic_action(&obs) - 0.02).abs() < 0.01);
        let lp = log_prob(0.3, 0.1, -0.7);
        let a = sigmoid(0.3);
        let gauss = -0.5 * ((0.3 - 0.1) / (-0.7f64).exp()).powi(2) + 0.7 - 0.5 * LN_2PI;
        assert!((lp - (gauss - (a * (1.0 - a)).ln())).abs() < 1e-12);
        assert!(log_prob(-800.0, -800.0, 0.0).is_finite());
    }

    #[test]
    fn gae_reductions() {
        let r = [1.0, -0.5, 2.0, 0.3];
        let v = [0.2, 0.1, -0.3, 0.5];
        let d = [false, false, false, false];
        let g = gae_advantages(&r, &v, &d, 0.7, 0.9, 0.0);
        for t in 0..4 {
            let next = if t < 3 { v[t + 1] } else { 0.7 };
            assert!((g.advantages[t] - (r[t] + 0.9 * next - v[t])).abs() < 1e-12);
        }
        let g = gae_advantages(&r, &[0.0; 4], &[false, true, false, true], 0.0, 1.0, 1.0);
        assert_eq!(g.advantages, vec![0.5, -0.5, 2.3, 0.3]);
    }

    #[test]
    fn gae_matches_double_loop() {
        let mut rng = path_rng(2, 0);
        let n = 50;
        let r: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let v: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
        let (gamma, lam, last) = (0.97, 0.9, 0.4);
        let g = gae_advantages(&r, &v, &d, last, gamma, lam);
        for t in 0..n {
            let mut a = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let live = if d[k] { 0.0 } else { 1.0 };
                let nv = if k + 1 < n { v[k + 1] } else { last };
                a += w * (r[k] + gamma * live * nv - v[k]);
                if d[k] {
                    break;
                }
                w *= gamma * lam;
            }
            assert!((g.advantages[t] - a).abs() < 1e-10);
        }
        let mean = g.normalized.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_surrogate(2.0, -1.0, 0.2), -2.0);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let cfg = PpoConfig {
            hidden: 2,
            depth: 1,
            ..Default::default()
        };
        let mut pol = GaussianPolicy::new(&cfg, &MarketParams::default(), &mut path_rng(3, 0));
        // 4x2 + 2 + 2 + 1 actor parameters plus log-std.
        assert_eq!(pol.actor.n_params() + 1, 14);
        let mut rng = path_rng(3, 1);
        pol.actor.params.iter_mut().for_each(|p| *p = 0.5 * standard_normal(&mut rng));
        pol.log_std = -0.3;
        let n = 16;
        let obs: Vec<[f64; 4]> = (0..n).map(|_| std::array::from_fn(|_| standard_normal(&mut rng))).collect();
        let x = obs_matrix(&obs);
        let u: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let adv: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let lp_old: Vec<f64> = (0..n)
            .map(|i| log_prob(u[i], pol.mean(&obs[i]), pol.log_std) + 0.1 * standard_normal(&mut rng))
            .collect();
        let loss = |p: &GaussianPolicy| {
            surrogate_loss_and_grad(p, x.view(), &u, &lp_old, &adv, 0.2, 0.01).unwrap().loss
        };
        let g = surrogate_loss_and_grad(&pol, x.view(), &u, &lp_old, &adv, 0.2, 0.01).unwrap();
        let h = 1e-6;
        for i in 0..pol.actor.n_params() {
            let mut a = pol.clone();
            let mut b = pol.clone();
            a.actor.params[i] += h;
            b.actor.params[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - g.actor[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{i}: {fd} {}", g.actor[i]);
        }
        let mut a = pol.clone();
        let mut b = pol.clone();
        a.log_std += h;
        b.log_std -= h;
        let fd = (loss(&a) - loss(&b)) / (2.0 * h);
        assert!((fd - g.log_std).abs() <= 1e-4 * fd.abs().max(1e-3));
    }

    #[test]
    fn rollout_bookkeeping() {
        let env_cfg = EnvConfig::default();
        let pol = small_policy(4);
        let mut w = RolloutWorker::new(&env_cfg, 9).unwrap();
        let b = w.collect(&pol, 250, &mut path_rng(4, 1)).unwrap();
        assert_eq!(b.len(), 250);
        for i in 0..b.len() {
            assert_eq!(b.logp[i], log_prob(b.u[i], pol.mean(&b.obs[i]), pol.log_std));
        }
        // Replay the same episodes through a fresh environment.
        let mut env = ExecutionEnv::new(env_cfg).unwrap();
        let mut ep = 0u32;
        env.reset(episode_seed(9, 0, 0));
        for i in 0..b.len() {
            let r = env.step(sigmoid(b.u[i])).unwrap();
            assert_eq!(r.reward, b.rewards[i]);
            assert_eq!(r.done, b.dones[i]);
            if r.done {
                assert!(env.state().q <= 1e-6 || env.step_index() == 100);
                ep += 1;
                env.reset(episode_seed(9, 0, ep));
            }
        }
        assert_eq!(b.episode_returns.len(), ep as usize);
    }

    #[test]
    fn checkpoint_reproduces_actions() {
        let mut pol = small_policy(5);
        pol.quantize();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ppo.ckpt");
        pol.save(&path, serde_json::json!({"scenario": "HH"})).unwrap();
        let back = GaussianPolicy::load(&path).unwrap();
        assert_eq!(back, pol);
        let seeds = [1, 2, 3];
        assert_eq!(
            evaluate_env(&pol, &EnvConfig::default(), &seeds).unwrap(),
            evaluate_env(&back, &EnvConfig::default(), &seeds).unwrap()
        );
    }
}
