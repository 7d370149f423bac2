//! Shortcut flow-matching training.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{adam_update, Adam, AdamConfig, Mlp, NetSpec};
use crate::rng::{path_rng, standard_normal, SimRng};

use super::{input_row, ActionTransform, AffineCodec, FlowPolicy, DT_LEVELS, D_MIN, INPUT_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub hidden: usize,
    pub depth: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of each batch trained on the direct `x1 - x0` velocity.
    pub p_frac: f64,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Default number of inference steps.
    pub inference_steps: usize,
    pub action_transform: ActionTransform,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            hidden: 128,
            depth: 2,
            lr: 1e-3,
            batch_size: 256,
            p_frac: 0.75,
            steps: 10_000,
            seed: 42,
            log_every: 500,
            inference_steps: 2,
            action_transform: ActionTransform::Logit,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !(0.0..=1.0).contains(&self.p_frac) || self.hidden == 0 || self.depth == 0 {
            return Err(Error::InvalidParams(
                "flow config needs batch_size >= 2, p_frac in [0,1], hidden/depth > 0".into(),
            ));
        }
        if !(self.lr > 0.0) || self.inference_steps == 0 {
            return Err(Error::InvalidParams("flow config needs lr > 0 and inference_steps >= 1".into()));
        }
        Ok(())
    }
}

/// Raw expert pairs: observations as produced by `env::normalize_obs` and
/// liquidation fractions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowData {
    pub obs: Vec<[f64; 4]>,
    pub actions: Vec<f64>,
}

impl FlowData {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, obs: [f64; 4], action: f64) {
        self.obs.push(obs);
        self.actions.push(action);
    }
}

/// One training row in network space (encoded observation and action).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    pub x1: f64,
    pub obs: [f64; 4],
    pub x0: f64,
    pub t: f64,
    pub d: f64,
}

/// Step size `d = 2^-m`, `m` uniform in `1..=7`, and `t = j d` with `j`
/// uniform in `0..1/d`.
pub fn sample_dt_pair(rng: &mut SimRng) -> (f64, f64) {
    let m = rng.random_range(1..=DT_LEVELS);
    let slots = 1u32 << m;
    let d = 1.0 / slots as f64;
    let j = rng.random_range(0..slots);
    (d, j as f64 * d)
}

/// Number of direct-velocity rows in a batch of `b`.
fn n_direct(b: usize, p_frac: f64) -> usize {
    ((p_frac * b as f64).floor() as usize).min(b)
}

/// Draws a batch from encoded pairs: the first `floor(p_frac B)` rows have
/// `d = 0` and `t ~ U[0, 1)`, the rest take `(d, t)` from [`sample_dt_pair`].
pub fn sample_batch(obs: &[[f64; 4]], x1: &[f64], rng: &mut SimRng, b: usize, p_frac: f64) -> Vec<FlowSample> {
    let na = n_direct(b, p_frac);
    (0..b)
        .map(|i| {
            let r = rng.random_range(0..x1.len());
            let x0 = standard_normal(rng);
            let (d, t) = if i < na { (0.0, rng.random::<f64>()) } else { sample_dt_pair(rng) };
            FlowSample {
                x1: x1[r],
                obs: obs[r],
                x0,
                t,
                d,
            }
        })
        .collect()
}

fn batch_inputs(rows: impl ExactSizeIterator<Item = [f64; INPUT_DIM]>) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((n, INPUT_DIM), flat).unwrap()
}

/// Loss, parameter gradient and the (gradient-free) regression targets for one batch.
///
/// Rows before `floor(p_frac B)` regress `x1 - x0` at `d = 0`. The remaining
/// rows follow two Euler steps of size `d` from `x_t` and regress the average
/// velocity at step size `2d`. At the finest level the two small steps query
/// the `d = 0` head, which anchors the consistency chain to the direct velocity.
pub fn shortcut_loss_and_grad(net: &Mlp, batch: &[FlowSample], p_frac: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::InvalidParams("batch size must be >= 2".into()));
    }
    let na = n_direct(b, p_frac);
    let xt: Vec<f64> = batch.iter().map(|s| (1.0 - s.t) * s.x0 + s.t * s.x1).collect();
    let mut targets: Vec<f64> = batch.iter().map(|s| s.x1 - s.x0).collect();
    let mut query_d = vec![0.0; b];

    if na < b {
        let small = |s: &FlowSample| if s.d <= D_MIN { 0.0 } else { s.d };
        let rows = &batch[na..];
        let first = net.predict_batch(
            batch_inputs(rows.iter().zip(&xt[na..]).map(|(s, x)| input_row(&s.obs, *x, s.t, small(s)))).view(),
        )?;
        let stepped: Vec<f64> = rows
            .iter()
            .zip(&xt[na..])
            .enumerate()
            .map(|(i, (s, x))| x + s.d * first[[i, 0]])
            .collect();
        let second = net.predict_batch(
            batch_inputs(rows.iter().zip(&stepped).map(|(s, x)| input_row(&s.obs, *x, s.t + s.d, small(s)))).view(),
        )?;
        for (i, s) in rows.iter().enumerate() {
            targets[na + i] = 0.5 * (first[[i, 0]] + second[[i, 0]]);
            query_d[na + i] = 2.0 * s.d;
        }
    }

    let inputs = batch_inputs(batch.iter().zip(&xt).zip(&query_d).map(|((s, x), d)| input_row(&s.obs, *x, s.t, *d)));
    let (loss, grads) = mse_loss_and_grad(net, inputs, &targets)?;
    Ok((loss, grads, targets))
}

/// Mean squared error against fixed targets and its parameter gradient.
pub fn mse_loss_and_grad(net: &Mlp, inputs: Array2<f64>, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let b = targets.len() as f64;
    let cache = net.forward_batch(inputs.view())?;
    let out = cache.output();
    let mut gout = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let e = out[[i, 0]] - t;
        loss += e * e;
        gout[[i, 0]] = 2.0 * e / b;
    }
    let grads = net.backward(&cache, gout.view())?;
    Ok((loss / b, grads))
}

/// One optimizer step. Returns the loss before the update.
pub fn shortcut_train_step(
    net: &mut Mlp,
    opt: &mut Adam,
    cfg: &AdamConfig,
    batch: &[FlowSample],
    p_frac: f64,
) -> Result<f64> {
    let (loss, grads, _) = shortcut_loss_and_grad(net, batch, p_frac)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("flow loss became {loss}")));
    }
    adam_update(&mut net.params, opt, &grads, cfg)?;
    Ok(loss)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `(step, mean loss since the previous entry)`.
    pub losses: Vec<(usize, f64)>,
}

/// Fits codecs on `data`, trains a velocity network and returns the policy
/// with `f32`-rounded weights.
pub fn train_flow(data: &FlowData, cfg: &FlowConfig) -> Result<(FlowPolicy, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParams("flow training needs at least one pair".into()));
    }
    let obs_codec = AffineCodec::fit(data.obs.iter().map(|o| o.as_slice()), 4, 1e-6)?;
    let transformed: Vec<f64> = data.actions.iter().map(|a| cfg.action_transform.forward(*a)).collect();
    let action_codec = AffineCodec::fit(transformed.chunks(1), 1, 1e-6)?;
    let obs: Vec<[f64; 4]> = data
        .obs
        .iter()
        .map(|o| std::array::from_fn(|j| obs_codec.encode_at(j, o[j])))
        .collect();
    let x1: Vec<f64> = transformed.iter().map(|a| action_codec.encode_at(0, *a)).collect();

    let mut init_rng = path_rng(cfg.seed, 0);
    let mut net = Mlp::init(NetSpec::mlp(INPUT_DIM, cfg.hidden, cfg.depth, 1), &mut init_rng, 1.0);
    let mut opt = Adam::new(net.n_params());
    let adam = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut rng = path_rng(cfg.seed, 1);
    let mut log = TrainLog::default();
    let mut acc = 0.0;
    let mut count = 0usize;
    for step in 1..=cfg.steps {
        let batch = sample_batch(&obs, &x1, &mut rng, cfg.batch_size, cfg.p_frac);
        acc += shortcut_train_step(&mut net, &mut opt, &adam, &batch, cfg.p_frac)?;
        count += 1;
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            let mean = acc / count as f64;
            log::info!("flow step {step}: loss {mean:.5}");
            log.losses.push((step, mean));
            acc = 0.0;
            count = 0;
        }
    }
    net.quantize();
    let policy = FlowPolicy {
        net,
        obs_codec,
        action_codec,
        config: cfg.clone(),
        adam: Some(opt),
    };
    Ok((policy, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_pairs_lie_on_grid() {
        let mut rng = path_rng(5, 0);
        let mut counts = [0usize; 8];
        let n = 100_000;
        for _ in 0..n {
            let (d, t) = sample_dt_pair(&mut rng);
            let m = (1.0 / d).log2().round() as usize;
            assert!((1..=7).contains(&m) && d == 0.5f64.powi(m as i32));
            assert_eq!((t / d).fract(), 0.0);
            assert!(t <= 1.0 - d);
            counts[m] += 1;
        }
        for c in &counts[1..] {
            assert!((*c as f64 / n as f64 - 1.0 / 7.0).abs() < 0.01);
        }
    }

    #[test]
    fn half_step_times() {
        let mut rng = path_rng(6, 0);
        for _ in 0..10_000 {
            let (d, t) = sample_dt_pair(&mut rng);
            if d == 0.5 {
                assert!(t == 0.0 || t == 0.5);
            }
        }
    }

    #[test]
    fn batch_branches() {
        let obs = vec![[0.0; 4]; 3];
        let x1 = vec![1.0, 2.0, 3.0];
        let mut rng = path_rng(7, 0);
        let b = sample_batch(&obs, &x1, &mut rng, 256, 0.75);
        assert!(b[..192].iter().all(|s| s.d == 0.0 && (0.0..1.0).contains(&s.t)));
        assert!(b[192..].iter().all(|s| s.d >= D_MIN));
    }

    #[test]
    fn constant_net_has_zero_consistency_loss() {
        let mut net = Mlp::zeros(NetSpec::mlp(INPUT_DIM, 8, 2, 1));
        *net.bias_mut(2).first_mut().unwrap() = 0.37;
        let batch: Vec<FlowSample> = (0..8)
            .map(|i| FlowSample {
                x1: i as f64,
                obs: [0.1; 4],
                x0: -0.2 * i as f64,
                t: 0.25,
                d: 0.125,
            })
            .collect();
        let (loss, _, targets) = shortcut_loss_and_grad(&net, &batch, 0.0).unwrap();
        assert!(targets.iter().all(|t| *t == 0.37));
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn degenerate_pair_has_zero_target() {
        let net = Mlp::zeros(NetSpec::mlp(INPUT_DIM, 4, 1, 1));
        let s = FlowSample {
            x1: 0.8,
            obs: [0.0; 4],
            x0: 0.8,
            t: 0.3,
            d: 0.0,
        };
        let (_, _, targets) = shortcut_loss_and_grad(&net, &[s, s], 1.0).unwrap();
        assert_eq!(targets, vec![0.0, 0.0]);
    }
}
