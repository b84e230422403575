//! The doubly robust empirical process over random frequency pairs, its
//! naive counterpart, and the Kolmogorov–Smirnov functional.
//!
//! Summands are cached per observation and pair:
//!
//! ```text
//! Ψ[t,l]  = rₜ · exp(i μₗᵀ𝐘ₜ₋₁) · (exp(i νₗᵀ𝐗ₜ₋₁) − φ̂(νₗ | 𝐘ₜ₋₁))
//! Ψ⁰[t,l] = rₜ · exp(i μₗᵀ𝐘ₜ₋₁) · exp(i νₗᵀ𝐗ₜ₋₁)
//! ```
//!
//! with `rₜ = Yₜ − m̂(𝐘ₜ₋₁)`. The process is the column sum scaled by
//! `rows^{-1/2}`, and KS is the largest absolute real or imaginary part.
//! The multiplier bootstrap consumes only the cached matrix.

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagcore::LaggedDesign;
use crate::mdn::CharFnEstimate;
use crate::seed::Rng;

/// Per-coordinate sampling interval for frequency pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqBounds {
    pub lo: f64,
    pub hi: f64,
}

impl FreqBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "frequency bounds must satisfy lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }
}

impl Default for FreqBounds {
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }
}

/// One frequency pair: `mu` weights lagged Y, `nu` weights lagged X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqPair {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqSet {
    pairs: Vec<FreqPair>,
    bounds: FreqBounds,
}

impl FreqSet {
    pub fn new(pairs: Vec<FreqPair>, bounds: FreqBounds) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::InvalidConfig("need at least one frequency pair".into()));
        };
        let (q, p) = (first.mu.len(), first.nu.len());
        for pair in &pairs {
            if pair.mu.len() != q || pair.nu.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: q + p,
                    actual: pair.mu.len() + pair.nu.len(),
                });
            }
        }
        Ok(Self { pairs, bounds })
    }

    pub fn pairs(&self) -> &[FreqPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn bounds(&self) -> FreqBounds {
        self.bounds
    }

    pub fn mu_dim(&self) -> usize {
        self.pairs[0].mu.len()
    }

    pub fn nu_dim(&self) -> usize {
        self.pairs[0].nu.len()
    }
}

/// `count` i.i.d. pairs uniform on `bounds^{q+p}`; μ is drawn before ν
/// within each pair.
pub fn sample_freq_pairs(count: usize, p: usize, q: usize, bounds: FreqBounds, rng: &mut Rng) -> Result<FreqSet> {
    if count == 0 {
        return Err(Error::InvalidConfig("need at least one frequency pair".into()));
    }
    let width = bounds.hi - bounds.lo;
    let mut draw = || bounds.lo + width * rng.random::<f64>();
    let pairs = (0..count)
        .map(|_| FreqPair {
            mu: (0..q).map(|_| draw()).collect(),
            nu: (0..p).map(|_| draw()).collect(),
        })
        .collect();
    FreqSet::new(pairs, bounds)
}

/// Cached complex summands, row-major `rows × pairs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummandMatrix {
    values: Vec<Complex64>,
    rows: usize,
    pairs: usize,
}

impl SummandMatrix {
    pub fn from_values(values: Vec<Complex64>, rows: usize, pairs: usize) -> Result<Self> {
        if values.len() != rows * pairs || rows == 0 || pairs == 0 {
            return Err(Error::DimensionMismatch {
                expected: rows * pairs,
                actual: values.len(),
            });
        }
        Ok(Self { values, rows, pairs })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn get(&self, row: usize, pair: usize) -> Complex64 {
        self.values[row * self.pairs + pair]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.values[row * self.pairs..(row + 1) * self.pairs]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self {
            values: self.values.iter().map(Complex64::conj).collect(),
            ..*self
        }
    }
}

/// Process values `Ŝ(μₗ, νₗ)` for every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessValues {
    values: Vec<Complex64>,
}

impl ProcessValues {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `KSₙ = maxₗ max(|Re Ŝₗ|, |Im Ŝₗ|)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TestStatistic(pub f64);

impl TestStatistic {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[inline]
fn phase(w: &[f64], v: &[f64]) -> Complex64 {
    let theta: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
    Complex64::new(theta.cos(), theta.sin())
}

fn check_shapes(design: &LaggedDesign, residuals: &[f64], pairs: &FreqSet) -> Result<()> {
    if residuals.len() != design.rows() {
        return Err(Error::DimensionMismatch {
            expected: design.rows(),
            actual: residuals.len(),
        });
    }
    let lags = design.lags();
    if pairs.mu_dim() != lags.q || pairs.nu_dim() != lags.p {
        return Err(Error::DimensionMismatch {
            expected: lags.q + lags.p,
            actual: pairs.mu_dim() + pairs.nu_dim(),
        });
    }
    Ok(())
}

pub fn compute_summands(
    design: &LaggedDesign,
    residuals: &[f64],
    cf: &CharFnEstimate,
    pairs: &FreqSet,
) -> Result<SummandMatrix> {
    check_shapes(design, residuals, pairs)?;
    if cf.rows() != design.rows() || cf.pairs() != pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: design.rows() * pairs.len(),
            actual: cf.rows() * cf.pairs(),
        });
    }
    let mut values = Vec::with_capacity(design.rows() * pairs.len());
    for (t, r) in residuals.iter().enumerate() {
        let (y, x) = (design.yvec(t), design.xvec(t));
        for (l, pair) in pairs.pairs().iter().enumerate() {
            let centered = phase(&pair.nu, x) - cf.get(t, l);
            values.push(*r * phase(&pair.mu, y) * centered);
        }
    }
    SummandMatrix::from_values(values, design.rows(), pairs.len())
}

pub fn compute_naive_summands(design: &LaggedDesign, residuals: &[f64], pairs: &FreqSet) -> Result<SummandMatrix> {
    check_shapes(design, residuals, pairs)?;
    let mut values = Vec::with_capacity(design.rows() * pairs.len());
    for (t, r) in residuals.iter().enumerate() {
        let (y, x) = (design.yvec(t), design.xvec(t));
        for pair in pairs.pairs() {
            values.push(*r * phase(&pair.mu, y) * phase(&pair.nu, x));
        }
    }
    SummandMatrix::from_values(values, design.rows(), pairs.len())
}

/// Column sums in ascending row order, scaled by `rows^{-1/2}`.
pub fn compute_process(summands: &SummandMatrix) -> ProcessValues {
    let mut sums = vec![Complex64::new(0.0, 0.0); summands.pairs()];
    for t in 0..summands.rows() {
        for (s, v) in sums.iter_mut().zip(summands.row(t)) {
            *s += v;
        }
    }
    let scale = 1.0 / (summands.rows() as f64).sqrt();
    ProcessValues::new(sums.into_iter().map(|s| s * scale).collect())
}

pub fn compute_ks(values: &ProcessValues) -> TestStatistic {
    TestStatistic(
        values
            .values()
            .iter()
            .map(|v| v.re.abs().max(v.im.abs()))
            .fold(0.0, f64::max),
    )
}

/// The infeasible process with population `m(𝐘ₜ₋₁)` and `φ(ν | 𝐘ₜ₋₁)`
/// substituted for their estimates.
pub fn compute_oracle_process<M, P>(
    design: &LaggedDesign,
    true_m: M,
    true_phi: P,
    pairs: &FreqSet,
) -> Result<ProcessValues>
where
    M: Fn(&[f64]) -> f64,
    P: Fn(&[f64], &[f64]) -> Complex64,
{
    let residuals: Vec<f64> = (0..design.rows())
        .map(|t| design.response()[t] - true_m(design.yvec(t)))
        .collect();
    let phi: Vec<Complex64> = (0..design.rows())
        .flat_map(|t| {
            let y = design.yvec(t);
            pairs
                .pairs()
                .iter()
                .map(|pair| true_phi(&pair.nu, y))
                .collect::<Vec<_>>()
        })
        .collect();
    let cf = CharFnEstimate::from_values(phi, design.rows(), pairs.len(), 0)?;
    Ok(compute_process(&compute_summands(design, &residuals, &cf, pairs)?))
}
