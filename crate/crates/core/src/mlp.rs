//! Conditional-mean estimator `m̂(𝐘ₜ₋₁) ≈ E(Yₜ | 𝐘ₜ₋₁)`: a small ReLU
//! network trained on the lagged-Y block of a design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagcore::{fit_scaler, LaggedDesign, Scaler};
use crate::net::{self, FitTrace, Network, Objective, OptimConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    SmoothL1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    /// Hidden width; `None` means five units per input lag.
    pub width: Option<usize>,
    pub loss: Loss,
    pub smooth_l1_delta: f64,
    pub standardize: bool,
    pub optim: OptimConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 1,
            width: None,
            loss: Loss::Squared,
            smooth_l1_delta: 1.0,
            standardize: true,
            optim: OptimConfig::default(),
        }
    }
}

impl MlpConfig {
    pub fn width_for(&self, inputs: usize) -> usize {
        self.width.unwrap_or(5 * inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == Some(0) {
            return Err(Error::InvalidConfig("MLP width must be at least 1".into()));
        }
        if self.loss == Loss::SmoothL1 && !(self.smooth_l1_delta > 0.0) {
            return Err(Error::InvalidConfig("smooth-L1 threshold must be positive".into()));
        }
        self.optim.validate()
    }

    fn layer_sizes(&self, inputs: usize) -> Vec<usize> {
        let width = self.width_for(inputs);
        let mut sizes = vec![inputs];
        sizes.extend(std::iter::repeat_n(width, self.hidden_layers));
        sizes.push(1);
        sizes
    }
}

/// Training diagnostics kept with a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainMeta {
    fn from_trace(trace: FitTrace, seed: u64) -> Self {
        Self {
            initial_loss: trace.initial_loss,
            final_loss: trace.final_loss,
            epochs: trace.epochs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    net: Network,
    scaler: Option<Scaler>,
    loss: Loss,
    smooth_l1_delta: f64,
    meta: Option<TrainMeta>,
}

pub(crate) struct Regression<'a> {
    pub target: &'a [f64],
    pub loss: Loss,
    pub delta: f64,
}

impl Regression<'_> {
    #[inline]
    fn value_slope(&self, r: f64) -> (f64, f64) {
        match self.loss {
            Loss::Squared => (r * r, 2.0 * r),
            Loss::SmoothL1 => {
                if r.abs() < self.delta {
                    (0.5 * r * r / self.delta, r / self.delta)
                } else {
                    (r.abs() - 0.5 * self.delta, r.signum())
                }
            }
        }
    }
}

impl Objective for Regression<'_> {
    fn loss_grad(&self, row: usize, output: &[f64], d_out: &mut [f64]) -> f64 {
        let (v, s) = self.value_slope(output[0] - self.target[row]);
        d_out[0] = s;
        v
    }

    fn loss(&self, row: usize, output: &[f64]) -> f64 {
        self.value_slope(output[0] - self.target[row]).0
    }
}

impl MlpModel {
    /// Wraps an explicit network. Without a scaler inputs are used as given.
    pub fn from_network(net: Network, scaler: Option<Scaler>, loss: Loss) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: net.output_dim(),
            });
        }
        if let Some(s) = &scaler {
            if s.dim() != net.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: net.input_dim(),
                    actual: s.dim(),
                });
            }
        }
        Ok(Self {
            net,
            scaler,
            loss,
            smooth_l1_delta: 1.0,
            meta: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    fn scaled_inputs(&self, design: &LaggedDesign) -> Vec<f64> {
        let q = design.lags().q;
        match &self.scaler {
            Some(s) => {
                let mut out = vec![0.0; design.ylags().len()];
                for (o, row) in out.chunks_exact_mut(q).zip(design.ylags().chunks_exact(q)) {
                    s.apply_into(row, o);
                }
                out
            }
            None => design.ylags().to_vec(),
        }
    }

    fn check_design(&self, design: &LaggedDesign) -> Result<()> {
        if design.lags().q != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: design.lags().q,
            });
        }
        Ok(())
    }

    fn objective<'a>(&self, target: &'a [f64]) -> Regression<'a> {
        Regression {
            target,
            loss: self.loss,
            delta: self.smooth_l1_delta,
        }
    }

    /// Versioned structured-text snapshot; round-trips bit-exactly.
    pub fn to_snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string(&Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let snap: Snapshot<MlpModel> = serde_json::from_str(text)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(Error::Unsupported(format!(
                "snapshot {} v{} (expected {SNAPSHOT_FORMAT} v{SNAPSHOT_VERSION})",
                snap.format, snap.version
            )));
        }
        Ok(snap.model)
    }
}

const SNAPSHOT_FORMAT: &str = "drgc-mlp";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub(crate) struct Snapshot<M> {
    pub format: String,
    pub version: u32,
    pub model: M,
}

/// Fits the conditional mean of the design response on its lagged-Y block.
///
/// The output bias starts at the response mean; the returned parameters are
/// the lowest-loss iterate, so `final_loss ≤ initial_loss` always holds.
pub fn train_mlp(design: &LaggedDesign, cfg: &MlpConfig) -> Result<MlpModel> {
    cfg.validate()?;
    let q = design.lags().q;
    let width = cfg.width_for(q);
    if design.rows() < width {
        return Err(Error::SeriesTooShort {
            required: width,
            actual: design.rows(),
        });
    }
    let scaler = if cfg.standardize {
        Some(fit_scaler(design)?)
    } else {
        None
    };
    let fan_in = scaler.as_ref().map_or(q, Scaler::informative_dims);
    let sizes = cfg.layer_sizes(q);
    let mut net = Network::new(&sizes, seed::domain(cfg.optim.seed, "mlp-init"), fan_in)?;
    let mean = design.response().iter().sum::<f64>() / design.rows() as f64;
    let out_bias = net.bias_index(sizes.len() - 2, 0);
    net.params_mut()[out_bias] = mean;

    let mut model = MlpModel {
        net,
        scaler,
        loss: cfg.loss,
        smooth_l1_delta: cfg.smooth_l1_delta,
        meta: None,
    };
    let inputs = model.scaled_inputs(design);
    let objective = model.objective(design.response());
    let trace = net::fit(&mut model.net, &inputs, &objective, &cfg.optim, "MLP")?;
    model.meta = Some(TrainMeta::from_trace(trace, cfg.optim.seed));
    Ok(model)
}

pub fn mlp_predict(model: &MlpModel, yvec: &[f64]) -> Result<f64> {
    if yvec.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: yvec.len(),
        });
    }
    let mut ws = model.net.workspace();
    let input = match &model.scaler {
        Some(s) => s.apply(yvec)?,
        None => yvec.to_vec(),
    };
    Ok(model.net.forward(&input, &mut ws)[0])
}

/// Mean training loss over `rows` of the design and its gradient with respect
/// to every network parameter (flat, in `Network` layout).
pub fn mlp_gradient(model: &MlpModel, design: &LaggedDesign, rows: &[usize]) -> Result<(f64, Vec<f64>)> {
    model.check_design(design)?;
    if rows.is_empty() {
        return Err(Error::InvalidConfig("gradient batch is empty".into()));
    }
    let inputs = model.scaled_inputs(design);
    let mut grad = vec![0.0; model.net.n_params()];
    let mut ws = model.net.workspace();
    let loss = net::batch_loss_grad(
        &model.net,
        &inputs,
        rows,
        &model.objective(design.response()),
        &mut ws,
        &mut grad,
    );
    Ok((loss, grad))
}

/// Mean training loss over `rows` (the quantity `mlp_gradient` differentiates).
pub fn mlp_loss(model: &MlpModel, design: &LaggedDesign, rows: &[usize]) -> Result<f64> {
    model.check_design(design)?;
    let inputs = model.scaled_inputs(design);
    let q = model.input_dim();
    let mut ws = model.net.workspace();
    let objective = model.objective(design.response());
    let total: f64 = rows
        .iter()
        .map(|&r| {
            let out = model.net.forward(&inputs[r * q..(r + 1) * q], &mut ws);
            objective.loss(r, out)
        })
        .sum();
    Ok(total / rows.len() as f64)
}

/// `yₜ − m̂(𝐘ₜ₋₁)` for every design row.
pub fn residuals(model: &MlpModel, design: &LaggedDesign) -> Result<Vec<f64>> {
    model.check_design(design)?;
    let inputs = model.scaled_inputs(design);
    let q = model.input_dim();
    let mut ws = model.net.workspace();
    Ok(design
        .response()
        .iter()
        .zip(inputs.chunks_exact(q))
        .map(|(y, x)| y - model.net.forward(x, &mut ws)[0])
        .collect())
}

/// Mutable access for tests that construct models parameter by parameter.
#[cfg(test)]
impl MlpModel {
    pub(crate) fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }
}
