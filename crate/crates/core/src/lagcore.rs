//! Bivariate series, lag embedding and the elementary transforms used
//! before testing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pair of equally long, finite series observed at the same times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPair {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TimeSeriesPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                x_len: x.len(),
                y_len: y.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { series: "x", index });
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { series: "y", index });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The same data with the roles of the two series exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

/// Lag orders: `p` lags of X and `q` lags of Y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagConfig {
    pub p: usize,
    pub q: usize,
}

impl LagConfig {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::InvalidConfig(format!(
                "lag orders must be positive (p = {p}, q = {q})"
            )));
        }
        Ok(Self { p, q })
    }

    /// Equal lag order for both series.
    pub fn symmetric(la: usize) -> Result<Self> {
        Self::new(la, la)
    }

    pub fn max_lag(&self) -> usize {
        self.p.max(self.q)
    }

    /// Smallest series length that still leaves two embedded rows.
    pub fn min_length(&self) -> usize {
        self.max_lag() + 2
    }
}

/// Rows `t = s..n` of (Yₜ, 𝐘ₜ₋₁, 𝐗ₜ₋₁), stored row-major.
///
/// `yvec(r)[j]` is `Y` at lag `j + 1` and `xvec(r)[k]` is `X` at lag `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesign {
    response: Vec<f64>,
    ylags: Vec<f64>,
    xlags: Vec<f64>,
    lags: LagConfig,
}

impl LaggedDesign {
    /// Builds a design from explicit rows. Used by tests and by callers that
    /// already hold embedded data.
    pub fn from_rows(response: Vec<f64>, ylags: Vec<f64>, xlags: Vec<f64>, lags: LagConfig) -> Result<Self> {
        let rows = response.len();
        if ylags.len() != rows * lags.q {
            return Err(Error::DimensionMismatch {
                expected: rows * lags.q,
                actual: ylags.len(),
            });
        }
        if xlags.len() != rows * lags.p {
            return Err(Error::DimensionMismatch {
                expected: rows * lags.p,
                actual: xlags.len(),
            });
        }
        Ok(Self {
            response,
            ylags,
            xlags,
            lags,
        })
    }

    pub fn rows(&self) -> usize {
        self.response.len()
    }

    pub fn lags(&self) -> LagConfig {
        self.lags
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn yvec(&self, row: usize) -> &[f64] {
        let q = self.lags.q;
        &self.ylags[row * q..(row + 1) * q]
    }

    pub fn xvec(&self, row: usize) -> &[f64] {
        let p = self.lags.p;
        &self.xlags[row * p..(row + 1) * p]
    }

    /// Row-major `rows × q` block of lagged Y.
    pub fn ylags(&self) -> &[f64] {
        &self.ylags
    }

    /// Row-major `rows × p` block of lagged X.
    pub fn xlags(&self) -> &[f64] {
        &self.xlags
    }
}

pub fn embed_lags(series: &TimeSeriesPair, lags: LagConfig) -> Result<LaggedDesign> {
    let n = series.len();
    if n < lags.min_length() {
        return Err(Error::SeriesTooShort {
            required: lags.min_length(),
            actual: n,
        });
    }
    let start = lags.max_lag();
    let rows = n - start;
    let mut response = Vec::with_capacity(rows);
    let mut ylags = Vec::with_capacity(rows * lags.q);
    let mut xlags = Vec::with_capacity(rows * lags.p);
    for t in start..n {
        response.push(series.y[t]);
        ylags.extend((0..lags.q).map(|j| series.y[t - 1 - j]));
        xlags.extend((0..lags.p).map(|k| series.x[t - 1 - k]));
    }
    Ok(LaggedDesign {
        response,
        ylags,
        xlags,
        lags,
    })
}

/// `100·(raw[i+1] − raw[i]) / raw[i]`.
pub fn percent_change(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() < 2 {
        return Err(Error::SeriesTooShort {
            required: 2,
            actual: raw.len(),
        });
    }
    if let Some((index, &value)) = raw.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    Ok(raw.windows(2).map(|w| 100.0 * (w[1] - w[0]) / w[0]).collect())
}

pub fn scale_volume(values: &[f64], divisor: f64) -> Result<Vec<f64>> {
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "volume divisor must be positive, got {divisor}"
        )));
    }
    Ok(values.iter().map(|v| v / divisor).collect())
}

/// Per-coordinate standardization learned from training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    mean: Vec<f64>,
    sd: Vec<f64>,
    degenerate: Vec<bool>,
}

impl Scaler {
    /// Fits on a row-major `rows × dim` block. Needs at least two rows.
    pub fn fit(data: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
            });
        }
        let rows = data.len() / dim;
        if rows < 2 {
            return Err(Error::SeriesTooShort {
                required: 2,
                actual: rows,
            });
        }
        let mut mean = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut degenerate = vec![false; dim];
        let sd = var
            .iter()
            .zip(&mean)
            .zip(degenerate.iter_mut())
            .map(|((s, m), d)| {
                let sd = (s / (rows as f64 - 1.0)).sqrt();
                // constant columns (up to rounding) keep unit scale
                if !(sd > 1e-12 * m.abs().max(1.0)) {
                    *d = true;
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, sd, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd
    }

    /// Number of coordinates that were not constant in the training data.
    pub fn informative_dims(&self) -> usize {
        self.degenerate.iter().filter(|d| !**d).count()
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(input).zip(&self.mean).zip(&self.sd) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check(input)?;
        let mut out = vec![0.0; input.len()];
        self.apply_into(input, &mut out);
        Ok(out)
    }

    pub fn invert(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        self.check(scaled)?;
        Ok(scaled
            .iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(())
    }
}

/// Scaler over the design's conditioning covariates (lagged Y).
pub fn fit_scaler(design: &LaggedDesign) -> Result<Scaler> {
    Scaler::fit(design.ylags(), design.lags().q)
}
