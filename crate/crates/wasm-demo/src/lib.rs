//! Browser bindings: simulate a design, run the full test on it, and show
//! Monte-Carlo CF convergence. Every export returns a JSON string.

use drgc::dgp::{generate, preset_from_key};
use drgc::harness::{run_single_test, StatisticMode, TestConfig};
use drgc::mdn::{mdn_cf_analytic, mdn_sample_into, MixtureParams};
use drgc::seed;
use num_complex::Complex64;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(value: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(js_err)
}

#[derive(Serialize)]
struct Series {
    x: Vec<f64>,
    y: Vec<f64>,
}

fn series(key: &str, t: usize, master: u32) -> drgc::Result<drgc::lagcore::TimeSeriesPair> {
    let spec = preset_from_key(key)?;
    generate(&spec, t, &mut seed::rng(seed::domain(master.into(), "data")))
}

/// `key` is `DGP:La`, e.g. `"P1:1"`.
#[wasm_bindgen]
pub fn simulate(key: &str, t: usize, master: u32) -> Result<String, JsError> {
    let s = series(key, t, master).map_err(js_err)?;
    to_json(&Series {
        x: s.x().to_vec(),
        y: s.y().to_vec(),
    })
}

#[derive(Serialize)]
struct TestSummary {
    ks: f64,
    p_value: f64,
    reject: bool,
    rows: usize,
    ks_star: Vec<f64>,
    mlp_final_loss: f64,
    mdn_final_loss: Option<f64>,
}

/// Runs the test on the series `simulate(key, t, master)` would return.
#[wasm_bindgen]
pub fn run_test(key: &str, t: usize, master: u32, bootstrap: usize, naive: bool) -> Result<String, JsError> {
    let s = series(key, t, master).map_err(js_err)?;
    let la = preset_from_key(key).map_err(js_err)?.la;
    let cfg = TestConfig {
        la,
        bootstrap,
        seed: seed::domain(master.into(), "test"),
        mode: if naive {
            StatisticMode::Naive
        } else {
            StatisticMode::DoublyRobust
        },
        ..TestConfig::default()
    };
    let r = run_single_test(&s, &cfg).map_err(js_err)?;
    to_json(&TestSummary {
        ks: r.ks,
        p_value: r.p_value,
        reject: r.reject,
        rows: r.rows,
        ks_star: r.ks_star,
        mlp_final_loss: r.diagnostics.mlp_final_loss,
        mdn_final_loss: r.diagnostics.mdn_final_loss,
    })
}

#[derive(Serialize)]
struct Convergence {
    draws: Vec<usize>,
    max_error: Vec<f64>,
    mean_error: Vec<f64>,
}

/// Max and mean |φ̂ − φ| over a ν grid for a fixed univariate
/// three-component mixture, at increasing draw counts.
#[wasm_bindgen]
pub fn cf_convergence(master: u32) -> Result<String, JsError> {
    let params =
        MixtureParams::new(vec![0.5, 0.3, 0.2], vec![-1.0, 0.5, 1.5], vec![0.6, 0.4, 1.0], 1).map_err(js_err)?;
    let grid: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
    let draws = vec![10, 30, 100, 300, 1000, 3000, 10000];
    let mut rng = seed::rng(seed::domain(master.into(), "cf"));
    let mut out = Convergence {
        draws: draws.clone(),
        max_error: Vec::new(),
        mean_error: Vec::new(),
    };
    let mut sample = Vec::new();
    for m in draws {
        sample.clear();
        mdn_sample_into(&params, m, &mut rng, &mut sample);
        let errors: Vec<f64> = grid
            .iter()
            .map(|&nu| {
                let est = sample
                    .iter()
                    .map(|x| Complex64::from_polar(1.0, nu * x))
                    .sum::<Complex64>()
                    / m as f64;
                (est - mdn_cf_analytic(&params, &[nu])).norm()
            })
            .collect();
        out.max_error.push(errors.iter().cloned().fold(0.0, f64::max));
        out.mean_error.push(errors.iter().sum::<f64>() / errors.len() as f64);
    }
    to_json(&out)
}
