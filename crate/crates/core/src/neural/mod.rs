//! Small fully connected networks with analytic gradients and Adam.
//!
//! Parameters live in one flat vector (per layer: row-major `W[out][in]`, then
//! `b[out]`), so gradients, optimizer moments and checkpoints share a layout.
//! Hidden layers use the configured activation; the output layer is linear.

pub mod checkpoint;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activated value `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = NetSpec {
            layer_widths,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> hidden x depth -> output` with tanh.
    pub fn mlp(input: usize, hidden: usize, depth: usize, output: usize) -> Self {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(hidden, depth));
        w.push(output);
        NetSpec {
            layer_widths: w,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return Err(Error::InvalidParams(
                "network needs input and output widths, all > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of `(W, b)` for layer `l` in the flat vector.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.layer_widths[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.layer_widths[l], self.layer_widths[l + 1]);
        (start, start + i * o)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: NetSpec,
    pub params: Vec<f64>,
}

/// Per-layer inputs and the final output of a batched forward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

impl Mlp {
    pub fn zeros(spec: NetSpec) -> Self {
        let n = spec.n_params();
        Mlp {
            spec,
            params: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights, zero biases. The output layer is scaled by `out_scale`.
    pub fn init(spec: NetSpec, rng: &mut SimRng, out_scale: f64) -> Self {
        let mut net = Mlp::zeros(spec);
        let last = net.spec.n_layers() - 1;
        for l in 0..net.spec.n_layers() {
            let (i, o) = (net.spec.layer_widths[l], net.spec.layer_widths[l + 1]);
            let bound = (6.0 / (i + o) as f64).sqrt() * if l == last { out_scale } else { 1.0 };
            let (w0, b0) = net.spec.offsets(l);
            for p in &mut net.params[w0..b0] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w0, b0) = self.spec.offsets(l);
        let (i, o) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
        ArrayView2::from_shape((o, i), &self.params[w0..b0]).unwrap()
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b0) = self.spec.offsets(l);
        let o = self.spec.layer_widths[l + 1];
        ArrayView1::from(&self.params[b0..b0 + o])
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b0) = self.spec.offsets(l);
        let o = self.spec.layer_widths[l + 1];
        &mut self.params[b0..b0 + o]
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    fn layer(&self, l: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights(l).t());
        z += &self.bias(l);
        if l + 1 < self.spec.n_layers() {
            let act = self.spec.activation;
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    /// Batched forward pass (rows are samples) keeping what backward needs.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Cache> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.spec.n_layers());
        let mut h = x.to_owned();
        for l in 0..self.spec.n_layers() {
            let next = self.layer(l, &h.view());
            inputs.push(h);
            h = next;
        }
        Ok(Cache { inputs, output: h })
    }

    /// Batched forward pass without a cache.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = self.layer(0, &x);
        for l in 1..self.spec.n_layers() {
            h = self.layer(l, &h.view());
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let cache = self.forward_batch(view)?;
        Ok((cache.output.row(0).to_vec(), cache))
    }

    /// Single-sample forward pass with plain loops (no matrix allocation).
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let n = self.spec.n_layers();
        let act = self.spec.activation;
        let mut h = x.to_vec();
        for l in 0..n {
            let (w0, b0) = self.spec.offsets(l);
            let (i, o) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
            let w = &self.params[w0..b0];
            let mut out = self.params[b0..b0 + o].to_vec();
            for (r, y) in out.iter_mut().enumerate() {
                *y += w[r * i..(r + 1) * i].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < n {
                    *y = act.apply(*y);
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Parameter gradient of `sum(output * output_grad)` over the batch.
    pub fn backward(&self, cache: &Cache, output_grad: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if output_grad.dim() != cache.output.dim() {
            return Err(Error::ShapeMismatch {
                expected: cache.output.len(),
                got: output_grad.len(),
            });
        }
        let mut grads = vec![0.0; self.n_params()];
        let mut g = output_grad.to_owned();
        for l in (0..self.spec.n_layers()).rev() {
            let input = &cache.inputs[l];
            let (w0, b0) = self.spec.offsets(l);
            let o = self.spec.layer_widths[l + 1];
            let dw = g.t().dot(input);
            grads[w0..b0].copy_from_slice(dw.as_slice().unwrap());
            let db = g.sum_axis(Axis(0));
            grads[b0..b0 + o].copy_from_slice(db.as_slice().unwrap());
            if l > 0 {
                let mut gi = g.dot(&self.weights(l));
                let act = self.spec.activation;
                gi.zip_mut_with(input, |d, y| *d *= act.grad_from_output(*y));
                g = gi;
            }
        }
        Ok(grads)
    }

    /// Rounds every parameter to the nearest `f32`, so a saved checkpoint
    /// reloads to exactly this network.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Batch matrix from rows.
pub fn rows_to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step on `params`.
pub fn adam_update(params: &mut [f64], state: &mut Adam, grads: &[f64], cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

/// Column means and standard deviations (floored at `min_std`).
pub fn column_stats(x: &Array2<f64>, min_std: f64) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(min_std));
    (mean, std)
}
