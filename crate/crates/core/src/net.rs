//! Dense ReLU networks with hand-written backpropagation and an Adam
//! trainer. Shared by the conditional-mean and mixture-density estimators.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Fully connected network: ReLU on every hidden layer, linear output.
///
/// Parameters live in one flat vector. Layer `l` stores its
/// `out × in` weight matrix row-major, followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-sample activation buffers reused across forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    // activations[0] is the input, activations[l + 1] the post-activation output of layer l
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Network {
    /// Keyed uniform initialization: every parameter is a pure function of
    /// `(seed, layer, row, column)` scaled by `1/√fan_in`. The first layer
    /// uses `first_fan_in` as its fan-in so that non-informative inputs can
    /// be excluded from the scaling.
    pub fn new(sizes: &[usize], seed: u64, first_fan_in: usize) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network layer sizes must be positive with at least input and output, got {sizes:?}"
            )));
        }
        let mut params = Vec::with_capacity(Self::count(sizes));
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let eff = if l == 0 { first_fan_in.max(1) } else { fan_in };
            let bound = 1.0 / (eff as f64).sqrt();
            for j in 0..fan_out {
                for i in 0..fan_in {
                    let h = seed::derive(seed, &[l as u64, j as u64, i as u64]);
                    params.push(bound * seed::unit_symmetric(h));
                }
            }
            for j in 0..fan_out {
                let h = seed::derive(seed, &[l as u64, j as u64, u64::MAX]);
                params.push(bound * seed::unit_symmetric(h));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    /// Network with every parameter zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let mut net = Self::new(sizes, 0, 1)?;
        net.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(net)
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index of the bias of unit `unit` in layer `layer`.
    pub fn bias_index(&self, layer: usize, unit: usize) -> usize {
        let offset: usize = Self::count(&self.sizes[..=layer]);
        offset + self.sizes[layer] * self.sizes[layer + 1] + unit
    }

    /// Index of the weight from input `input` to unit `unit` in layer `layer`.
    pub fn weight_index(&self, layer: usize, unit: usize, input: usize) -> usize {
        let offset: usize = Self::count(&self.sizes[..=layer]);
        offset + unit * self.sizes[layer] + input
    }

    pub fn workspace(&self) -> Workspace {
        let widest = *self.sizes.iter().max().unwrap();
        Workspace {
            activations: self.sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }

    /// Forward pass; the returned slice is the network output.
    pub fn forward<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(input.len(), self.input_dim());
        ws.activations[0].copy_from_slice(input);
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (before, after) = ws.activations.split_at_mut(l + 1);
            let x = &before[l];
            let out = &mut after[0];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut z = b[j];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    z += wi * xi;
                }
                out[j] = if l + 1 < layers { z.max(0.0) } else { z };
            }
            offset += n_in * n_out + n_out;
        }
        &ws.activations[layers]
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output` for the
    /// input most recently passed through `forward` with the same workspace.
    pub fn backward(&self, ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offset = self.params.len();
        ws.delta[..d_out.len()].copy_from_slice(d_out);
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let x = &ws.activations[l];
            // delta holds ∂loss/∂z for this layer's pre-activations
            {
                let gw = &mut grad[offset..offset + n_in * n_out];
                for j in 0..n_out {
                    let d = ws.delta[j];
                    if d != 0.0 {
                        for (g, xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            {
                let gb = &mut grad[offset + n_in * n_out..offset + n_in * n_out + n_out];
                for (g, d) in gb.iter_mut().zip(&ws.delta[..n_out]) {
                    *g += d;
                }
            }
            if l > 0 {
                let w = &self.params[offset..offset + n_in * n_out];
                let next = &mut ws.delta_next[..n_in];
                next.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..n_out {
                    let d = ws.delta[j];
                    if d != 0.0 {
                        for (nv, wi) in next.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                            *nv += d * wi;
                        }
                    }
                }
                // ReLU derivative on the previous layer's output
                for (nv, a) in next.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *nv = 0.0;
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_next);
            }
        }
    }
}

/// A per-row training objective evaluated on network outputs.
pub trait Objective {
    /// Loss for `row` at `output`; writes `∂loss/∂output` into `d_out`.
    fn loss_grad(&self, row: usize, output: &[f64], d_out: &mut [f64]) -> f64;

    /// Loss only.
    fn loss(&self, row: usize, output: &[f64]) -> f64;
}

/// Mean loss over `rows` and its gradient (overwrites `grad`).
pub fn batch_loss_grad<O: Objective>(
    net: &Network,
    inputs: &[f64],
    rows: &[usize],
    objective: &O,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    let d = net.input_dim();
    let mut d_out = vec![0.0; net.output_dim()];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / rows.len() as f64;
    let mut total = 0.0;
    for &r in rows {
        let out = net.forward(&inputs[r * d..(r + 1) * d], ws);
        total += objective.loss_grad(r, out, &mut d_out);
        d_out.iter_mut().for_each(|v| *v *= scale);
        net.backward(ws, &d_out, grad);
    }
    total * scale
}

/// Mean loss over every row of `inputs`.
pub fn mean_loss<O: Objective>(net: &Network, inputs: &[f64], objective: &O) -> f64 {
    let d = net.input_dim();
    let mut ws = net.workspace();
    let rows = inputs.len() / d;
    let total: f64 = (0..rows)
        .map(|r| {
            let out = net.forward(&inputs[r * d..(r + 1) * d], &mut ws);
            objective.loss(r, out)
        })
        .sum();
    total / rows as f64
}

/// Adaptive-moment optimizer settings shared by both estimators.
///
/// The 50-epoch default is a deliberately short, fixed budget; see the
/// workspace README on nuisance training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: None,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Loss history summary of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Trains `net` in place and leaves it at the lowest training loss seen.
pub fn fit<O: Objective>(
    net: &mut Network,
    inputs: &[f64],
    objective: &O,
    cfg: &OptimConfig,
    stage: &'static str,
) -> Result<FitTrace> {
    cfg.validate()?;
    let rows = inputs.len() / net.input_dim();
    let mut ws = net.workspace();
    let mut grad = vec![0.0; net.n_params()];
    let mut adam = Adam::new(net.n_params());
    let mut order: Vec<usize> = (0..rows).collect();
    let batch = cfg.batch_size.unwrap_or(rows).min(rows);
    let full_batch = batch == rows;
    let mut shuffle_rng = seed::rng(seed::domain(cfg.seed, "shuffle"));

    let mut best = net.params.clone();
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        if full_batch {
            let loss = batch_loss_grad(net, inputs, &order, objective, &mut ws, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { stage, epoch });
            }
            if epoch == 0 {
                initial_loss = loss;
            }
            if loss < best_loss {
                best_loss = loss;
                best.copy_from_slice(&net.params);
            }
            adam.update(&mut net.params, &grad, cfg.learning_rate);
        } else {
            if epoch == 0 {
                initial_loss = mean_loss(net, inputs, objective);
                if !initial_loss.is_finite() {
                    return Err(Error::TrainingDiverged { stage, epoch });
                }
                best_loss = initial_loss;
                best.copy_from_slice(&net.params);
            }
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(batch) {
                let loss = batch_loss_grad(net, inputs, chunk, objective, &mut ws, &mut grad);
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { stage, epoch });
                }
                adam.update(&mut net.params, &grad, cfg.learning_rate);
            }
            let loss = mean_loss(net, inputs, objective);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { stage, epoch });
            }
            if loss < best_loss {
                best_loss = loss;
                best.copy_from_slice(&net.params);
            }
        }
    }
    if full_batch {
        let loss = mean_loss(net, inputs, objective);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                stage,
                epoch: cfg.epochs,
            });
        }
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&net.params);
        }
    }
    net.params.copy_from_slice(&best);
    Ok(FitTrace {
        initial_loss,
        final_loss: best_loss,
        epochs: cfg.epochs,
    })
}
