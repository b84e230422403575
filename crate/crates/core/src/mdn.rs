//! Mixture density network for the conditional law of 𝐗ₜ₋₁ given 𝐘ₜ₋₁.
//!
//! For an input `y` the network emits, per component `g = 1..G`, a mixing
//! logit, a mean vector and a vector of scale pre-activations. Weights come
//! from a softmax over the logits and scales from `softplus + σ_floor`, so the
//! fitted conditional density is a proper diagonal Gaussian mixture for every
//! input. The conditional characteristic function is estimated by
//! Monte-Carlo averaging over draws from that mixture.

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drstat::FreqSet;
use crate::error::{Error, Result};
use crate::lagcore::{fit_scaler, LaggedDesign, Scaler};
use crate::mlp::{Snapshot, TrainMeta};
use crate::net::{self, Network, Objective, OptimConfig};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdnConfig {
    pub components: usize,
    pub hidden_layers: usize,
    /// Hidden width; `None` means five units per input lag.
    pub width: Option<usize>,
    pub sigma_floor: f64,
    pub standardize: bool,
    pub optim: OptimConfig,
}

impl Default for MdnConfig {
    fn default() -> Self {
        Self {
            components: 10,
            hidden_layers: 1,
            width: None,
            sigma_floor: 1e-3,
            standardize: true,
            optim: OptimConfig::default(),
        }
    }
}

impl MdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if self.width == Some(0) {
            return Err(Error::InvalidConfig("MDN width must be at least 1".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma floor must be positive".into()));
        }
        self.optim.validate()
    }
}

/// Mixture weights, means and scales for one conditioning input.
/// `mu` and `sigma` are component-major: entry `g * p + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dim: usize,
}

impl MixtureParams {
    pub fn new(alpha: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>, dim: usize) -> Result<Self> {
        let g = alpha.len();
        if g == 0 || dim == 0 || mu.len() != g * dim || sigma.len() != g * dim {
            return Err(Error::DimensionMismatch {
                expected: g * dim,
                actual: mu.len().max(sigma.len()),
            });
        }
        let total: f64 = alpha.iter().sum();
        if alpha.iter().any(|a| !(*a >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig("mixture weights must lie on the simplex".into()));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("mixture scales must be positive".into()));
        }
        Ok(Self { alpha, mu, sigma, dim })
    }

    pub fn components(&self) -> usize {
        self.alpha.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let p = self.dim;
        let mut m = vec![0.0; p];
        for (g, a) in self.alpha.iter().enumerate() {
            for j in 0..p {
                m[j] += a * self.mu[g * p + j];
            }
        }
        m
    }

    /// Per-coordinate variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let p = self.dim;
        let mean = self.mean();
        let mut v = vec![0.0; p];
        for (g, a) in self.alpha.iter().enumerate() {
            for j in 0..p {
                let (mu, s) = (self.mu[g * p + j], self.sigma[g * p + j]);
                v[j] += a * (s * s + mu * mu);
            }
        }
        v.iter().zip(&mean).map(|(s, m)| s - m * m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnModel {
    net: Network,
    scaler: Option<Scaler>,
    components: usize,
    dim: usize,
    sigma_floor: f64,
    meta: Option<TrainMeta>,
}

/// Monte-Carlo conditional CF estimates, row-major `rows × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFnEstimate {
    values: Vec<Complex64>,
    rows: usize,
    pairs: usize,
    samples: usize,
}

impl CharFnEstimate {
    pub fn from_values(values: Vec<Complex64>, rows: usize, pairs: usize, samples: usize) -> Result<Self> {
        if values.len() != rows * pairs {
            return Err(Error::DimensionMismatch {
                expected: rows * pairs,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            rows,
            pairs,
            samples,
        })
    }

    pub fn get(&self, row: usize, pair: usize) -> Complex64 {
        self.values[row * self.pairs + pair]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

fn softplus_inverse(v: f64) -> f64 {
    if v > 20.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

struct MixtureNll<'a> {
    targets: &'a [f64],
    components: usize,
    dim: usize,
    floor: f64,
}

impl MixtureNll<'_> {
    /// Fills `log_terms[g] = log αg + log N(x; μg, σg)` and returns the NLL.
    fn terms(&self, row: usize, out: &[f64], log_terms: &mut [f64]) -> f64 {
        let (g_n, p) = (self.components, self.dim);
        let x = &self.targets[row * p..(row + 1) * p];
        let logits = &out[..g_n];
        let lse_logits = log_sum_exp(logits);
        for g in 0..g_n {
            let mut ln = logits[g] - lse_logits;
            for j in 0..p {
                let mu = out[g_n + g * p + j];
                let sigma = softplus(out[g_n + g_n * p + g * p + j]) + self.floor;
                let z = (x[j] - mu) / sigma;
                ln -= HALF_LN_2PI + sigma.ln() + 0.5 * z * z;
            }
            log_terms[g] = ln;
        }
        -log_sum_exp(log_terms)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Objective for MixtureNll<'_> {
    fn loss_grad(&self, row: usize, out: &[f64], d_out: &mut [f64]) -> f64 {
        let (g_n, p) = (self.components, self.dim);
        let x = &self.targets[row * p..(row + 1) * p];
        let mut log_terms = vec![0.0; g_n];
        let nll = self.terms(row, out, &mut log_terms);
        let lse_logits = log_sum_exp(&out[..g_n]);
        for g in 0..g_n {
            // responsibility of component g
            let gamma = (log_terms[g] + nll).exp();
            let alpha = (out[g] - lse_logits).exp();
            d_out[g] = alpha - gamma;
            for j in 0..p {
                let mu = out[g_n + g * p + j];
                let s = out[g_n + g_n * p + g * p + j];
                let sigma = softplus(s) + self.floor;
                let r = x[j] - mu;
                let inv2 = 1.0 / (sigma * sigma);
                d_out[g_n + g * p + j] = -gamma * r * inv2;
                let d_sigma = -gamma * (r * r * inv2 / sigma - 1.0 / sigma);
                d_out[g_n + g_n * p + g * p + j] = d_sigma * sigmoid(s);
            }
        }
        nll
    }

    fn loss(&self, row: usize, out: &[f64]) -> f64 {
        let mut log_terms = vec![0.0; self.components];
        self.terms(row, out, &mut log_terms)
    }
}

impl MdnModel {
    pub fn from_network(
        net: Network,
        scaler: Option<Scaler>,
        components: usize,
        dim: usize,
        sigma_floor: f64,
    ) -> Result<Self> {
        let expected = components * (1 + 2 * dim);
        if net.output_dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: net.output_dim(),
            });
        }
        Ok(Self {
            net,
            scaler,
            components,
            dim,
            sigma_floor,
            meta: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    fn params_from_output(&self, out: &[f64]) -> MixtureParams {
        let (g_n, p) = (self.components, self.dim);
        let lse = log_sum_exp(&out[..g_n]);
        let alpha = out[..g_n].iter().map(|l| (l - lse).exp()).collect();
        let mu = out[g_n..g_n + g_n * p].to_vec();
        let sigma = out[g_n + g_n * p..]
            .iter()
            .map(|s| softplus(*s) + self.sigma_floor)
            .collect();
        MixtureParams {
            alpha,
            mu,
            sigma,
            dim: p,
        }
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
        if design.lags().p != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: design.lags().p,
            });
        }
        Ok(())
    }

    fn objective<'a>(&self, design: &'a LaggedDesign) -> MixtureNll<'a> {
        MixtureNll {
            targets: design.xlags(),
            components: self.components,
            dim: self.dim,
            floor: self.sigma_floor,
        }
    }

    pub fn to_snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string(&Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let snap: Snapshot<MdnModel> = serde_json::from_str(text)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(Error::Unsupported(format!(
                "snapshot {} v{} (expected {SNAPSHOT_FORMAT} v{SNAPSHOT_VERSION})",
                snap.format, snap.version
            )));
        }
        Ok(snap.model)
    }
}

const SNAPSHOT_FORMAT: &str = "drgc-mdn";
const SNAPSHOT_VERSION: u32 = 1;

/// Fits the conditional mixture of the lagged-X block given lagged Y by
/// minimizing the mean negative log-likelihood.
///
/// Mean and scale heads start at the marginal mean and standard deviation of
/// each response coordinate. The lowest-NLL iterate is returned.
pub fn train_mdn(design: &LaggedDesign, cfg: &MdnConfig) -> Result<MdnModel> {
    cfg.validate()?;
    let lags = design.lags();
    let (p, q, g_n) = (lags.p, lags.q, cfg.components);
    if design.rows() < g_n {
        return Err(Error::SeriesTooShort {
            required: g_n,
            actual: design.rows(),
        });
    }
    let scaler = if cfg.standardize {
        Some(fit_scaler(design)?)
    } else {
        None
    };
    let fan_in = scaler.as_ref().map_or(q, Scaler::informative_dims);
    let width = cfg.width.unwrap_or(5 * q);
    let mut sizes = vec![q];
    sizes.extend(std::iter::repeat_n(width, cfg.hidden_layers));
    sizes.push(g_n * (1 + 2 * p));
    let mut net = Network::new(&sizes, seed::domain(cfg.optim.seed, "mdn-init"), fan_in)?;

    let response = Scaler::fit(design.xlags(), p)?;
    let out_layer = sizes.len() - 2;
    for g in 0..g_n {
        let logit_idx = net.bias_index(out_layer, g);
        net.params_mut()[logit_idx] = 0.0;
        for j in 0..p {
            let mu_idx = net.bias_index(out_layer, g_n + g * p + j);
            net.params_mut()[mu_idx] += response.mean()[j];
            let target = (response.sd()[j] - cfg.sigma_floor).max(cfg.sigma_floor);
            let s_idx = net.bias_index(out_layer, g_n + g_n * p + g * p + j);
            net.params_mut()[s_idx] = softplus_inverse(target);
        }
    }

    let mut model = MdnModel {
        net,
        scaler,
        components: g_n,
        dim: p,
        sigma_floor: cfg.sigma_floor,
        meta: None,
    };
    let inputs = model.scaled_inputs(design);
    let objective = model.objective(design);
    let trace = net::fit(&mut model.net, &inputs, &objective, &cfg.optim, "MDN")?;
    model.meta = Some(TrainMeta {
        initial_loss: trace.initial_loss,
        final_loss: trace.final_loss,
        epochs: trace.epochs,
        seed: cfg.optim.seed,
    });
    Ok(model)
}

pub fn mdn_params(model: &MdnModel, yvec: &[f64]) -> Result<MixtureParams> {
    if yvec.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: yvec.len(),
        });
    }
    let input = match &model.scaler {
        Some(s) => s.apply(yvec)?,
        None => yvec.to_vec(),
    };
    let mut ws = model.net.workspace();
    Ok(model.params_from_output(model.net.forward(&input, &mut ws)))
}

/// Appends `m` draws (row-major `m × p`) to `out`.
pub fn mdn_sample_into(params: &MixtureParams, m: usize, rng: &mut Rng, out: &mut Vec<f64>) {
    let p = params.dim;
    let last = params.components() - 1;
    for _ in 0..m {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut g = last;
        for (k, a) in params.alpha.iter().enumerate() {
            acc += a;
            if u < acc {
                g = k;
                break;
            }
        }
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            out.push(params.mu[g * p + j] + params.sigma[g * p + j] * z);
        }
    }
}

/// Draws `m` vectors from the mixture: component by weight, then independent
/// normal coordinates.
pub fn mdn_sample(params: &MixtureParams, m: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut flat = Vec::with_capacity(m * params.dim);
    mdn_sample_into(params, m, rng, &mut flat);
    flat.chunks_exact(params.dim).map(<[f64]>::to_vec).collect()
}

/// Closed-form CF `Σg αg exp(i νᵀμg − ½ Σj νj² σgj²)`.
pub fn mdn_cf_analytic(params: &MixtureParams, nu: &[f64]) -> Complex64 {
    let p = params.dim;
    params
        .alpha
        .iter()
        .enumerate()
        .map(|(g, a)| {
            let mut phase = 0.0;
            let mut damp = 0.0;
            for j in 0..p {
                phase += nu[j] * params.mu[g * p + j];
                let s = params.sigma[g * p + j];
                damp += nu[j] * nu[j] * s * s;
            }
            Complex64::from_polar(a * (-0.5 * damp).exp(), phase)
        })
        .sum()
}

/// Monte-Carlo `φ̂(νl | 𝐘ₜ₋₁) = M⁻¹ Σm exp(i νlᵀ X*m)`.
///
/// `M` draws are generated once per row (rows in ascending order) and reused
/// for every frequency pair.
pub fn estimate_cf(
    model: &MdnModel,
    design: &LaggedDesign,
    pairs: &FreqSet,
    m: usize,
    rng: &mut Rng,
) -> Result<CharFnEstimate> {
    model.check_design(design)?;
    if m == 0 {
        return Err(Error::InvalidConfig("need at least one generator draw".into()));
    }
    if pairs.nu_dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            actual: pairs.nu_dim(),
        });
    }
    let p = model.dim;
    let inputs = model.scaled_inputs(design);
    let q = model.input_dim();
    let mut ws = model.net.workspace();
    let n_pairs = pairs.len();
    let mut values = Vec::with_capacity(design.rows() * n_pairs);
    let mut draws = Vec::with_capacity(m * p);
    for row in 0..design.rows() {
        let params = model.params_from_output(model.net.forward(&inputs[row * q..(row + 1) * q], &mut ws));
        draws.clear();
        mdn_sample_into(&params, m, rng, &mut draws);
        for pair in pairs.pairs() {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in draws.chunks_exact(p) {
                let theta: f64 = pair.nu.iter().zip(x).map(|(a, b)| a * b).sum();
                acc += Complex64::new(theta.cos(), theta.sin());
            }
            values.push(acc / m as f64);
        }
    }
    Ok(CharFnEstimate {
        values,
        rows: design.rows(),
        pairs: n_pairs,
        samples: m,
    })
}

pub fn mdn_gradient(model: &MdnModel, design: &LaggedDesign, rows: &[usize]) -> Result<(f64, Vec<f64>)> {
    model.check_design(design)?;
    if rows.is_empty() {
        return Err(Error::InvalidConfig("gradient batch is empty".into()));
    }
    let inputs = model.scaled_inputs(design);
    let mut grad = vec![0.0; model.net.n_params()];
    let mut ws = model.net.workspace();
    let loss = net::batch_loss_grad(&model.net, &inputs, rows, &model.objective(design), &mut ws, &mut grad);
    Ok((loss, grad))
}

/// Mean negative log-likelihood over `rows`.
pub fn mdn_nll(model: &MdnModel, design: &LaggedDesign, rows: &[usize]) -> Result<f64> {
    model.check_design(design)?;
    let inputs = model.scaled_inputs(design);
    let q = model.input_dim();
    let objective = model.objective(design);
    let mut ws = model.net.workspace();
    let total: f64 = rows
        .iter()
        .map(|&r| objective.loss(r, model.net.forward(&inputs[r * q..(r + 1) * q], &mut ws)))
        .sum();
    Ok(total / rows.len() as f64)
}

/// Held-out score of one candidate component count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub components: usize,
    pub holdout_nll: f64,
}

/// Forward-chaining selection of G: fit on the first 80% of rows, score the
/// NLL of the last 20%, keep the smallest score (ties favor the smaller G).
pub fn select_components(
    design: &LaggedDesign,
    cfg: &MdnConfig,
    grid: &[usize],
) -> Result<(usize, Vec<ComponentScore>)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("component grid is empty".into()));
    }
    let rows = design.rows();
    let cut = rows * 4 / 5;
    if cut < 2 || cut == rows {
        return Err(Error::SeriesTooShort {
            required: 10,
            actual: rows,
        });
    }
    let lags = design.lags();
    let split = |range: std::ops::Range<usize>| {
        LaggedDesign::from_rows(
            design.response()[range.clone()].to_vec(),
            design.ylags()[range.start * lags.q..range.end * lags.q].to_vec(),
            design.xlags()[range.start * lags.p..range.end * lags.p].to_vec(),
            lags,
        )
    };
    let train = split(0..cut)?;
    let test = split(cut..rows)?;
    let test_rows: Vec<usize> = (0..test.rows()).collect();
    let mut scores = Vec::with_capacity(grid.len());
    for &g in grid {
        let model = train_mdn(
            &train,
            &MdnConfig {
                components: g,
                ..cfg.clone()
            },
        )?;
        scores.push(ComponentScore {
            components: g,
            holdout_nll: mdn_nll(&model, &test, &test_rows)?,
        });
    }
    let best = scores
        .iter()
        .fold(None::<ComponentScore>, |best, s| match best {
            Some(b) if b.holdout_nll <= s.holdout_nll => Some(b),
            _ => Some(*s),
        })
        .unwrap();
    Ok((best.components, scores))
}
