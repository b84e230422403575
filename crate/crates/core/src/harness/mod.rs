//! End-to-end test runner, Monte-Carlo experiments, the price/volume
//! pipeline and result reporting.
//!
//! One master seed fixes every random stream of a test through named
//! domains: `"mlp"`, `"mdn"`, `"freq"`, `"cf"` and `"bootstrap"`. Because
//! the naive statistic never touches the MDN or the CF stream, a naive run
//! and the naive half of a shared run produce identical numbers.

mod experiment;
mod realdata;
mod report;

pub use experiment::{
    cell_seed, run_cell, run_experiment, CellResult, CellSpec, ExperimentPlan, RejectionTable, Replication,
};
pub use realdata::{
    load_price_volume_csv, parse_price_volume_csv, run_price_volume, run_real_data, transform_series, Direction,
    LagOutcome, PriceVolume, RealDataJob,
};
pub use report::{
    emit_report, experiment_table, parse_records, read_records, real_data_table, records_from_outcomes,
    records_from_table, records_table, records_to_string, write_records, TestRecord,
};

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapConfig, MultiplierLaw};
use crate::drstat::{
    compute_ks, compute_naive_summands, compute_process, compute_summands, sample_freq_pairs, FreqBounds, FreqSet,
    ProcessValues, SummandMatrix,
};
use crate::error::{Error, Result};
use crate::lagcore::{embed_lags, LagConfig, LaggedDesign, TimeSeriesPair};
use crate::mdn::{estimate_cf, train_mdn, MdnConfig};
use crate::mlp::{residuals, train_mlp, MlpConfig, MlpModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticMode {
    DoublyRobust,
    Naive,
}

impl fmt::Display for StatisticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DoublyRobust => "doubly_robust",
            Self::Naive => "naive",
        })
    }
}

impl FromStr for StatisticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dr" | "doubly_robust" => Ok(Self::DoublyRobust),
            "naive" => Ok(Self::Naive),
            other => Err(Error::InvalidConfig(format!(
                "unknown statistic mode {other:?} (expected dr or naive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Common lag order; `p` and `q` override it per series.
    pub la: usize,
    pub p: Option<usize>,
    pub q: Option<usize>,
    /// Number of frequency pairs `L`.
    pub freq_pairs: usize,
    /// Generator draws per row `M`.
    pub cf_draws: usize,
    pub freq_bounds: FreqBounds,
    /// Bootstrap replications `B`.
    pub bootstrap: usize,
    pub law: MultiplierLaw,
    pub alpha: f64,
    pub mlp: MlpConfig,
    /// Mixture size `G` is `mdn.components`.
    pub mdn: MdnConfig,
    pub seed: u64,
    pub mode: StatisticMode,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            la: 1,
            p: None,
            q: None,
            freq_pairs: 20,
            cf_draws: 20,
            freq_bounds: FreqBounds::default(),
            bootstrap: 1000,
            law: MultiplierLaw::Rademacher,
            alpha: 0.05,
            mlp: MlpConfig::default(),
            mdn: MdnConfig::default(),
            seed: 0,
            mode: StatisticMode::DoublyRobust,
        }
    }
}

impl TestConfig {
    pub fn lags(&self) -> Result<LagConfig> {
        LagConfig::new(self.p.unwrap_or(self.la), self.q.unwrap_or(self.la))
    }

    pub fn validate(&self) -> Result<()> {
        self.lags()?;
        if self.freq_pairs == 0 {
            return Err(Error::InvalidConfig("need at least one frequency pair".into()));
        }
        if self.cf_draws == 0 {
            return Err(Error::InvalidConfig("need at least one generator draw per row".into()));
        }
        FreqBounds::new(self.freq_bounds.lo, self.freq_bounds.hi)?;
        self.bootstrap_config().validate()?;
        self.mlp.validate()?;
        self.mdn.validate()
    }

    fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replications: self.bootstrap,
            law: self.law,
            alpha: self.alpha,
            seed: seed::domain(self.seed, "bootstrap"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mlp_initial_loss: f64,
    pub mlp_final_loss: f64,
    pub mlp_epochs: usize,
    /// Absent for the naive statistic.
    pub mdn_initial_loss: Option<f64>,
    pub mdn_final_loss: Option<f64>,
    pub mdn_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub mode: StatisticMode,
    pub ks: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub rows: usize,
    pub process_re: Vec<f64>,
    pub process_im: Vec<f64>,
    pub ks_star: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub seed: u64,
    pub config: TestConfig,
}

struct SharedFit {
    design: LaggedDesign,
    residuals: Vec<f64>,
    pairs: FreqSet,
    mlp_meta: (f64, f64, usize),
}

fn shared_fit(series: &TimeSeriesPair, cfg: &TestConfig) -> Result<SharedFit> {
    cfg.validate()?;
    let lags = cfg.lags()?;
    let design = embed_lags(series, lags).map_err(|e| e.at_stage("embed"))?;
    let mut mlp_cfg = cfg.mlp.clone();
    mlp_cfg.optim.seed = seed::domain(cfg.seed, "mlp");
    let model: MlpModel = train_mlp(&design, &mlp_cfg).map_err(|e| e.at_stage("mlp"))?;
    let res = residuals(&model, &design).map_err(|e| e.at_stage("mlp"))?;
    let meta = model.meta().expect("trained model carries metadata");
    let pairs = sample_freq_pairs(
        cfg.freq_pairs,
        lags.p,
        lags.q,
        cfg.freq_bounds,
        &mut seed::rng(seed::domain(cfg.seed, "freq")),
    )?;
    Ok(SharedFit {
        design,
        residuals: res,
        pairs,
        mlp_meta: (meta.initial_loss, meta.final_loss, meta.epochs),
    })
}

fn dr_summands(fit: &SharedFit, cfg: &TestConfig) -> Result<(SummandMatrix, (f64, f64, usize))> {
    let mut mdn_cfg = cfg.mdn.clone();
    mdn_cfg.optim.seed = seed::domain(cfg.seed, "mdn");
    let mdn = train_mdn(&fit.design, &mdn_cfg).map_err(|e| e.at_stage("mdn"))?;
    let cf = estimate_cf(
        &mdn,
        &fit.design,
        &fit.pairs,
        cfg.cf_draws,
        &mut seed::rng(seed::domain(cfg.seed, "cf")),
    )
    .map_err(|e| e.at_stage("cf"))?;
    let psi = compute_summands(&fit.design, &fit.residuals, &cf, &fit.pairs)?;
    let meta = mdn.meta().expect("trained model carries metadata");
    Ok((psi, (meta.initial_loss, meta.final_loss, meta.epochs)))
}

fn finish(
    fit: &SharedFit,
    psi: &SummandMatrix,
    mode: StatisticMode,
    mdn_meta: Option<(f64, f64, usize)>,
    cfg: &TestConfig,
) -> Result<TestResult> {
    let process: ProcessValues = compute_process(psi);
    let ks = compute_ks(&process);
    let boot = run_bootstrap(psi, ks, &cfg.bootstrap_config()).map_err(|e| e.at_stage("bootstrap"))?;
    let mut config = cfg.clone();
    config.mode = mode;
    Ok(TestResult {
        mode,
        ks: ks.value(),
        p_value: boot.p_value,
        reject: boot.reject,
        alpha: cfg.alpha,
        rows: psi.rows(),
        process_re: process.real(),
        process_im: process.imag(),
        ks_star: boot.ks_star,
        diagnostics: Diagnostics {
            mlp_initial_loss: fit.mlp_meta.0,
            mlp_final_loss: fit.mlp_meta.1,
            mlp_epochs: fit.mlp_meta.2,
            mdn_initial_loss: mdn_meta.map(|m| m.0),
            mdn_final_loss: mdn_meta.map(|m| m.1),
            mdn_epochs: mdn_meta.map(|m| m.2),
        },
        seed: cfg.seed,
        config,
    })
}

/// Embeds, trains both estimators on the whole sample, builds the summand
/// matrix for `cfg.mode`, and bootstraps its KS statistic.
pub fn run_single_test(series: &TimeSeriesPair, cfg: &TestConfig) -> Result<TestResult> {
    let fit = shared_fit(series, cfg)?;
    match cfg.mode {
        StatisticMode::DoublyRobust => {
            let (psi, mdn_meta) = dr_summands(&fit, cfg)?;
            finish(&fit, &psi, StatisticMode::DoublyRobust, Some(mdn_meta), cfg)
        }
        StatisticMode::Naive => {
            let psi = compute_naive_summands(&fit.design, &fit.residuals, &fit.pairs)?;
            finish(&fit, &psi, StatisticMode::Naive, None, cfg)
        }
    }
}

/// Runs every requested mode from one conditional-mean fit, one pair draw
/// and one multiplier stream. Each result equals the corresponding
/// single-mode run with the same config.
pub fn run_modes(series: &TimeSeriesPair, cfg: &TestConfig, modes: &[StatisticMode]) -> Result<Vec<TestResult>> {
    if modes.is_empty() {
        return Err(Error::InvalidConfig("no statistic mode requested".into()));
    }
    let fit = shared_fit(series, cfg)?;
    let mut dr = None;
    modes
        .iter()
        .map(|&mode| match mode {
            StatisticMode::DoublyRobust => {
                if dr.is_none() {
                    dr = Some(dr_summands(&fit, cfg)?);
                }
                let (psi, meta) = dr.as_ref().expect("just computed");
                finish(&fit, psi, mode, Some(*meta), cfg)
            }
            StatisticMode::Naive => {
                let psi = compute_naive_summands(&fit.design, &fit.residuals, &fit.pairs)?;
                finish(&fit, &psi, mode, None, cfg)
            }
        })
        .collect()
}

/// Wall-clock milliseconds of `f`; unavailable on targets without a clock.
fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Option<f64>)> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let start = std::time::Instant::now();
        let v = f()?;
        Ok((v, Some(start.elapsed().as_secs_f64() * 1e3)))
    }
    #[cfg(target_arch = "wasm32")]
    {
        Ok((f()?, None))
    }
}

/// Process values as complex numbers, in pair order.
pub fn process_values(result: &TestResult) -> Vec<Complex64> {
    result
        .process_re
        .iter()
        .zip(&result.process_im)
        .map(|(re, im)| Complex64::new(*re, *im))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, preset, DgpKind};
    use crate::net::OptimConfig;

    pub(super) fn quick_config(la: usize) -> TestConfig {
        let optim = OptimConfig {
            epochs: 40,
            ..OptimConfig::default()
        };
        TestConfig {
            la,
            bootstrap: 99,
            mlp: MlpConfig {
                optim: optim.clone(),
                ..MlpConfig::default()
            },
            mdn: MdnConfig {
                components: 3,
                optim,
                ..MdnConfig::default()
            },
            ..TestConfig::default()
        }
    }

    fn series(kind: DgpKind, la: usize, t: usize, s: u64) -> TimeSeriesPair {
        generate(&preset(kind, la).unwrap(), t, &mut seed::rng(s)).unwrap()
    }

    #[test]
    fn single_test_is_deterministic() {
        let s = series(DgpKind::P1, 1, 200, 1);
        let cfg = quick_config(1);
        let a = run_single_test(&s, &cfg).unwrap();
        assert_eq!(a, run_single_test(&s, &cfg).unwrap());
        assert_eq!(a.reject, a.p_value < a.alpha);
        assert_eq!(a.ks_star.len(), 99);
        assert_eq!(a.process_re.len(), 20);
        assert_eq!(a.rows, 199);
        assert!(a.diagnostics.mdn_final_loss.is_some());
    }

    #[test]
    fn shared_modes_match_single_runs() {
        let s = series(DgpKind::S1, 2, 200, 2);
        let cfg = quick_config(2);
        let both = run_modes(&s, &cfg, &[StatisticMode::Naive, StatisticMode::DoublyRobust]).unwrap();
        let naive = run_single_test(
            &s,
            &TestConfig {
                mode: StatisticMode::Naive,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(both[0], naive);
        assert_eq!(both[1], run_single_test(&s, &cfg).unwrap());
        assert!(naive.diagnostics.mdn_epochs.is_none());
    }

    #[test]
    fn short_series_reports_stage() {
        let s = series(DgpKind::S1, 1, 4, 0);
        let err = run_single_test(&s, &quick_config(3)).unwrap_err();
        assert!(err.to_string().contains("series too short"), "{err}");
        assert!(err.to_string().starts_with("embed"), "{err}");
        assert_eq!(err.class(), crate::ErrorClass::Data);
    }

    #[test]
    fn training_divergence_reports_stage() {
        let s = series(DgpKind::S1, 1, 200, 0);
        let mut cfg = quick_config(1);
        cfg.mlp.optim.learning_rate = 1e200;
        let err = run_single_test(&s, &cfg).unwrap_err();
        assert_eq!(err.class(), crate::ErrorClass::Numerical, "{err}");
        assert!(err.to_string().starts_with("mlp"), "{err}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let s = series(DgpKind::S1, 1, 100, 0);
        for cfg in [
            TestConfig {
                alpha: 1.0,
                ..quick_config(1)
            },
            TestConfig {
                la: 0,
                ..quick_config(1)
            },
            TestConfig {
                freq_pairs: 0,
                ..quick_config(1)
            },
            TestConfig {
                cf_draws: 0,
                ..quick_config(1)
            },
            TestConfig {
                bootstrap: 0,
                ..quick_config(1)
            },
        ] {
            assert_eq!(run_single_test(&s, &cfg).unwrap_err().class(), crate::ErrorClass::Usage);
        }
        assert!(run_modes(&s, &quick_config(1), &[]).is_err());
    }

    #[test]
    fn separate_lag_orders() {
        let s = series(DgpKind::P2, 2, 150, 3);
        let cfg = TestConfig {
            p: Some(1),
            q: Some(3),
            ..quick_config(2)
        };
        let r = run_single_test(&s, &cfg).unwrap();
        assert_eq!(r.rows, 147);
    }

    #[test]
    fn mode_names() {
        assert_eq!("dr".parse::<StatisticMode>().unwrap(), StatisticMode::DoublyRobust);
        assert_eq!("naive".parse::<StatisticMode>().unwrap(), StatisticMode::Naive);
        assert!("x".parse::<StatisticMode>().is_err());
        assert_eq!(StatisticMode::DoublyRobust.to_string(), "doubly_robust");
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = quick_config(3);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TestConfig>(&text).unwrap(), cfg);
        let partial: TestConfig = toml::from_str("la = 2\nalpha = 0.1\n[mdn]\ncomponents = 4\n").unwrap();
        assert_eq!((partial.la, partial.alpha, partial.mdn.components), (2, 0.1, 4));
        assert_eq!(partial.cf_draws, 20);
        assert!(toml::from_str::<TestConfig>("lag = 2").is_err());
        let optim: TestConfig = toml::from_str("[mlp.optim]\nlearning_rate = 0.01\n[mdn.optim]\nepochs = 7\n").unwrap();
        assert_eq!((optim.mlp.optim.learning_rate, optim.mlp.optim.epochs), (0.01, 50));
        assert_eq!((optim.mdn.optim.learning_rate, optim.mdn.optim.epochs), (1e-3, 7));
        assert!(toml::from_str::<TestConfig>("[mlp.optim]\nepoch = 7\n").is_err());
        assert!(toml::from_str::<TestConfig>("[mdn]\ncomponent = 3\n").is_err());
    }
}
