//! Multiplier bootstrap over a cached summand matrix.
//!
//! Each replication reweights the rows of Ψ by i.i.d. mean-zero, unit
//! variance multipliers and recomputes KS. Nothing is re-estimated: the only
//! input is the matrix itself.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drstat::{compute_ks, ProcessValues, SummandMatrix, TestStatistic};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierLaw {
    /// ±1 with equal probability.
    Rademacher,
    /// Mammen's two-point law.
    Mammen,
    /// Unbounded; provided for sensitivity runs.
    StandardNormal,
}

impl std::str::FromStr for MultiplierLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(Self::Rademacher),
            "mammen" => Ok(Self::Mammen),
            "standard_normal" | "normal" => Ok(Self::StandardNormal),
            other => Err(Error::InvalidConfig(format!("unknown multiplier law {other:?}"))),
        }
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;

/// Mammen support points and the probability of the lower point.
pub fn mammen_law() -> (f64, f64, f64) {
    let low = -(SQRT5 - 1.0) / 2.0;
    let high = (SQRT5 + 1.0) / 2.0;
    let p_low = (SQRT5 + 1.0) / (2.0 * SQRT5);
    (low, high, p_low)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub law: MultiplierLaw,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replications: 1000,
            law: MultiplierLaw::Rademacher,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one replication".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "significance level must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub ks_star: Vec<f64>,
    pub p_value: f64,
    pub reject: bool,
}

pub fn draw_multipliers(rows: usize, law: MultiplierLaw, rng: &mut Rng) -> Vec<f64> {
    match law {
        MultiplierLaw::Rademacher => (0..rows)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        MultiplierLaw::Mammen => {
            let (low, high, p_low) = mammen_law();
            (0..rows)
                .map(|_| if rng.random::<f64>() < p_low { low } else { high })
                .collect()
        }
        MultiplierLaw::StandardNormal => (0..rows).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

/// `Ŝ*ₗ = rows^{-1/2} Σₜ ξₜ Ψ[t,l]`, summed in ascending row order.
pub fn bootstrap_process(summands: &SummandMatrix, multipliers: &[f64]) -> Result<ProcessValues> {
    if multipliers.len() != summands.rows() {
        return Err(Error::DimensionMismatch {
            expected: summands.rows(),
            actual: multipliers.len(),
        });
    }
    let mut sums = vec![Complex64::new(0.0, 0.0); summands.pairs()];
    for (t, xi) in multipliers.iter().enumerate() {
        for (s, v) in sums.iter_mut().zip(summands.row(t)) {
            *s += v * xi;
        }
    }
    let scale = 1.0 / (summands.rows() as f64).sqrt();
    Ok(ProcessValues::new(sums.into_iter().map(|s| s * scale).collect()))
}

/// `B⁻¹ Σ_b 1(KS*_b ≥ KSₙ)`.
pub fn bootstrap_p_value(ks: f64, ks_star: &[f64]) -> f64 {
    ks_star.iter().filter(|v| **v >= ks).count() as f64 / ks_star.len() as f64
}

fn replication(summands: &SummandMatrix, cfg: &BootstrapConfig, b: usize) -> f64 {
    let mut rng = seed::rng(seed::derive(cfg.seed, &[b as u64]));
    let xi = draw_multipliers(summands.rows(), cfg.law, &mut rng);
    compute_ks(&bootstrap_process(summands, &xi).expect("multiplier length matches rows")).value()
}

/// Runs `B` replications, each with its own counter-derived multiplier
/// stream; draws are ordered by replication index.
pub fn run_bootstrap(summands: &SummandMatrix, ks: TestStatistic, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    let ks_star: Vec<f64> = {
        use rayon::prelude::*;
        (0..cfg.replications)
            .into_par_iter()
            .map(|b| replication(summands, cfg, b))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let ks_star: Vec<f64> = (0..cfg.replications).map(|b| replication(summands, cfg, b)).collect();
    let p_value = bootstrap_p_value(ks.value(), &ks_star);
    Ok(BootstrapResult {
        ks_star,
        p_value,
        reject: p_value < cfg.alpha,
    })
}
