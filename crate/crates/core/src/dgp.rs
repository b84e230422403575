//! Simulation designs: two null processes (S1, S2) and four alternatives
//! (P1–P4), each with an AR(La) driver X and lag order La ∈ 1..=5.
//!
//! | kind | Yₜ deterministic part |
//! |------|-----------------------|
//! | S1 | `0.5 Σ aⱼ Yₜ₋ⱼ` |
//! | S2 | `a Σ exp(−0.5 Y²ₜ₋ⱼ)` |
//! | P1 | `0.5 Σ aⱼ Yₜ₋ⱼ + sin(Σ cₖ Xₜ₋ₖ)` |
//! | P2 | `0.5 Σ aⱼ Yₜ₋ⱼ + 0.5 c Σ X²ₜ₋ₖ` |
//! | P3 | `a Σ exp(−0.5 Y²ₜ₋ⱼ) + c Σ cos(Xₜ₋ₖ)` |
//! | P4 | `a₀ Σ Xₜ₋ⱼ Yₜ₋ⱼ` |
//!
//! and `Xₜ = 0.5 Σ bₖ Xₜ₋ₖ + ε₁ₜ` throughout.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagcore::TimeSeriesPair;
use crate::seed::Rng;

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpKind {
    S1,
    S2,
    P1,
    P2,
    P3,
    P4,
}

impl DgpKind {
    pub const ALL: [DgpKind; 6] = [Self::S1, Self::S2, Self::P1, Self::P2, Self::P3, Self::P4];

    /// True for the designs under which X does not Granger-cause Y.
    pub fn is_null(self) -> bool {
        matches!(self, Self::S1 | Self::S2)
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown DGP kind {s:?}")))
    }
}

/// Coefficients of one design. Fields a kind does not use are empty/`None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub la: usize,
    /// `aⱼ` (S1, P1, P2).
    pub a: Vec<f64>,
    /// `bₖ` of the X recursion (all kinds).
    pub b: Vec<f64>,
    /// `cₖ` (P1).
    pub c: Vec<f64>,
    /// Scalar `a` (S2, P3).
    pub a_scalar: Option<f64>,
    /// Scalar `c` (P2, P3).
    pub c_scalar: Option<f64>,
    /// `a₀` (P4).
    pub a0: Option<f64>,
    pub innovation_variance: f64,
    pub burn_in: usize,
}

struct LagParams {
    a: &'static [f64],
    b: &'static [f64],
    c: &'static [f64],
    a_scalar: f64,
    c_scalar: f64,
    a0: f64,
}

const PRESETS: [LagParams; 5] = [
    LagParams {
        a: &[1.0],
        b: &[-1.0],
        c: &[-1.0],
        a_scalar: 0.5,
        c_scalar: 1.0,
        a0: 0.5,
    },
    LagParams {
        a: &[0.5, -0.5],
        b: &[-0.5, 0.5],
        c: &[-0.5, 0.5],
        a_scalar: 0.25,
        c_scalar: 0.6,
        a0: 0.4,
    },
    LagParams {
        a: &[0.5, -0.5, 0.5],
        b: &[-0.5, 0.5, 0.5],
        c: &[-0.5, 0.5, -0.5],
        a_scalar: 0.25,
        c_scalar: 0.5,
        a0: 1.0 / 3.0,
    },
    LagParams {
        a: &[0.25, -0.25, 0.25, 0.25],
        b: &[-0.25, 0.25, 0.25, -0.25],
        c: &[-0.25, 0.25, -0.25, 0.25],
        a_scalar: 0.125,
        c_scalar: 0.5,
        a0: 1.0 / 3.0,
    },
    LagParams {
        a: &[0.25, -0.25, 0.25, 0.25, -0.25],
        b: &[-0.25, 0.25, 0.25, -0.25, 0.25],
        c: &[-0.25, 0.25, -0.25, 0.25, -0.25],
        a_scalar: 0.125,
        c_scalar: 0.5,
        a0: 1.0 / 3.0,
    },
];

pub fn preset(kind: DgpKind, la: usize) -> Result<DgpSpec> {
    if !(1..=5).contains(&la) {
        return Err(Error::InvalidConfig(format!(
            "lag order must be in 1..=5 for preset designs, got {la}"
        )));
    }
    let t = &PRESETS[la - 1];
    let mut spec = DgpSpec {
        kind,
        la,
        a: Vec::new(),
        b: t.b.to_vec(),
        c: Vec::new(),
        a_scalar: None,
        c_scalar: None,
        a0: None,
        innovation_variance: 0.5,
        burn_in: 500,
    };
    match kind {
        DgpKind::S1 => spec.a = t.a.to_vec(),
        DgpKind::S2 => spec.a_scalar = Some(t.a_scalar),
        DgpKind::P1 => {
            spec.a = t.a.to_vec();
            spec.c = t.c.to_vec();
        }
        DgpKind::P2 => {
            spec.a = t.a.to_vec();
            spec.c_scalar = Some(t.c_scalar);
        }
        DgpKind::P3 => {
            spec.a_scalar = Some(t.a_scalar);
            spec.c_scalar = Some(t.c_scalar);
        }
        DgpKind::P4 => spec.a0 = Some(t.a0),
    }
    Ok(spec)
}

/// Parses keys of the form `"S1:1"` … `"P4:5"`.
pub fn preset_from_key(key: &str) -> Result<DgpSpec> {
    let (kind, la) = key
        .split_once(':')
        .ok_or_else(|| Error::InvalidConfig(format!("DGP key {key:?} must look like S1:1")))?;
    let la: usize = la
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad lag in DGP key {key:?}")))?;
    preset(kind.trim().parse()?, la)
}

impl DgpSpec {
    pub fn key(&self) -> String {
        format!("{}:{}", self.kind, self.la)
    }

    fn validate(&self) -> Result<()> {
        let la = self.la;
        let need = |v: &Vec<f64>, name: &str| {
            if v.len() == la {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{} needs {la} coefficients {name}, got {}",
                    self.kind,
                    v.len()
                )))
            }
        };
        need(&self.b, "b")?;
        match self.kind {
            DgpKind::S1 => need(&self.a, "a")?,
            DgpKind::P1 => {
                need(&self.a, "a")?;
                need(&self.c, "c")?
            }
            DgpKind::P2 => need(&self.a, "a")?,
            _ => {}
        }
        let missing = |v: Option<f64>, name: &str| {
            v.map(|_| ())
                .ok_or_else(|| Error::InvalidConfig(format!("{} needs scalar {name}", self.kind)))
        };
        match self.kind {
            DgpKind::S2 => missing(self.a_scalar, "a")?,
            DgpKind::P2 => missing(self.c_scalar, "c")?,
            DgpKind::P3 => {
                missing(self.a_scalar, "a")?;
                missing(self.c_scalar, "c")?
            }
            DgpKind::P4 => missing(self.a0, "a0")?,
            _ => {}
        }
        if !(self.innovation_variance > 0.0) {
            return Err(Error::InvalidConfig("innovation variance must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic part of the Y equation. `ylags[j]` and `xlags[k]` are
    /// lags `j + 1` and `k + 1`.
    fn y_mean(&self, ylags: &[f64], xlags: &[f64]) -> f64 {
        let lin = |coef: &[f64], v: &[f64]| coef.iter().zip(v).map(|(c, v)| c * v).sum::<f64>();
        let bump = |v: &[f64]| v.iter().map(|y| (-0.5 * y * y).exp()).sum::<f64>();
        match self.kind {
            DgpKind::S1 => 0.5 * lin(&self.a, ylags),
            DgpKind::S2 => self.a_scalar.unwrap() * bump(ylags),
            DgpKind::P1 => 0.5 * lin(&self.a, ylags) + lin(&self.c, xlags).sin(),
            DgpKind::P2 => {
                0.5 * lin(&self.a, ylags) + 0.5 * self.c_scalar.unwrap() * xlags.iter().map(|x| x * x).sum::<f64>()
            }
            DgpKind::P3 => {
                self.a_scalar.unwrap() * bump(ylags)
                    + self.c_scalar.unwrap() * xlags.iter().map(|x| x.cos()).sum::<f64>()
            }
            DgpKind::P4 => self.a0.unwrap() * xlags.iter().zip(ylags).map(|(x, y)| x * y).sum::<f64>(),
        }
    }

    fn x_mean(&self, xlags: &[f64]) -> f64 {
        0.5 * self.b.iter().zip(xlags).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Bounded shift function `Δ(𝐗ₜ₋₁, 𝐘ₜ₋₁)` for local alternatives.
pub type ShiftFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Null design plus a shift of size `T^{-1/2} Δ(𝐖ₜ₋₁)` in the Y equation.
#[derive(Clone)]
pub struct LocalAltSpec {
    pub base: DgpSpec,
    pub shift: ShiftFn,
    /// Declared bound `sup |Δ|`, checked on every evaluation.
    pub bound: f64,
}

impl LocalAltSpec {
    /// The example shift `Δ(W) = sin(Σ X lags)` (bounded by 1).
    pub fn sine_of_x_lags(base: DgpSpec) -> Self {
        Self {
            base,
            shift: Arc::new(|x: &[f64], _: &[f64]| x.iter().sum::<f64>().sin()),
            bound: 1.0,
        }
    }
}

fn simulate(
    spec: &DgpSpec,
    t_len: usize,
    rng: &mut Rng,
    shift: Option<(&ShiftFn, f64, f64)>,
) -> Result<TimeSeriesPair> {
    spec.validate()?;
    let la = spec.la;
    if t_len < la + 2 {
        return Err(Error::SeriesTooShort {
            required: la + 2,
            actual: t_len,
        });
    }
    let total = spec.burn_in + t_len;
    let sd = spec.innovation_variance.sqrt();
    // oldest-first history with `la` zero initial conditions in front
    let mut x = vec![0.0; la + total];
    let mut y = vec![0.0; la + total];
    let mut xl = vec![0.0; la];
    let mut yl = vec![0.0; la];
    for step in 0..total {
        let t = la + step;
        for k in 0..la {
            xl[k] = x[t - 1 - k];
            yl[k] = y[t - 1 - k];
        }
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        x[t] = spec.x_mean(&xl) + sd * e1;
        let mut m = spec.y_mean(&yl, &xl);
        if let Some((delta, bound, scale)) = shift {
            let d = delta(&xl, &yl);
            if !(d.abs() <= bound) {
                return Err(Error::InvalidConfig(format!(
                    "local-alternative shift {d} exceeds its declared bound {bound}"
                )));
            }
            m += scale * d;
        }
        y[t] = m + sd * e2;
        if !(x[t].abs() <= DIVERGENCE_THRESHOLD && y[t].abs() <= DIVERGENCE_THRESHOLD) {
            return Err(Error::SimulationDiverged {
                step,
                threshold: DIVERGENCE_THRESHOLD,
            });
        }
    }
    let keep = la + spec.burn_in;
    TimeSeriesPair::new(x[keep..].to_vec(), y[keep..].to_vec())
}

/// Simulates `burn_in + t_len` steps from zero initial conditions and keeps
/// the last `t_len`. Innovations are drawn X first, then Y, at every step.
pub fn generate(spec: &DgpSpec, t_len: usize, rng: &mut Rng) -> Result<TimeSeriesPair> {
    simulate(spec, t_len, rng, None)
}

pub fn generate_local_alt(spec: &LocalAltSpec, t_len: usize, rng: &mut Rng) -> Result<TimeSeriesPair> {
    if !spec.base.kind.is_null() {
        return Err(Error::Unsupported(format!(
            "local alternatives need a null base design, got {}",
            spec.base.kind
        )));
    }
    let scale = 1.0 / (t_len as f64).sqrt();
    simulate(&spec.base, t_len, rng, Some((&spec.shift, spec.bound, scale)))
}

/// Conditional mean of Yₜ given its lags (S kinds) or given all lags (P kinds).
/// Null designs never read `xvec`.
pub fn oracle_m(spec: &DgpSpec, yvec: &[f64], xvec: &[f64]) -> Result<f64> {
    if yvec.len() != spec.la {
        return Err(Error::DimensionMismatch {
            expected: spec.la,
            actual: yvec.len(),
        });
    }
    if spec.kind.is_null() {
        return Ok(spec.y_mean(yvec, &[]));
    }
    if xvec.len() != spec.la {
        return Err(Error::DimensionMismatch {
            expected: spec.la,
            actual: xvec.len(),
        });
    }
    Ok(spec.y_mean(yvec, xvec))
}

/// Autocovariances `γ(0..=la)` of the stationary X recursion, from the
/// Yule–Walker system.
pub fn x_autocovariance(spec: &DgpSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let la = spec.la;
    let phi: Vec<f64> = spec.b.iter().map(|b| 0.5 * b).collect();
    // unknowns γ(0..=la):  γ(h) − Σₖ φₖ γ(|h−k|) = σ² 1(h = 0)
    let n = la + 1;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for h in 0..n {
        a[(h, h)] += 1.0;
        for k in 1..=la {
            let lag = (h as isize - k as isize).unsigned_abs();
            a[(h, lag)] -= phi[k - 1];
        }
    }
    rhs[0] = spec.innovation_variance;
    let gamma = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unsupported("X recursion is not stationary".into()))?;
    if !(gamma[0] > 0.0) {
        return Err(Error::Unsupported("X recursion is not stationary".into()));
    }
    Ok(gamma.iter().copied().collect())
}

/// CF of the lag vector 𝐗ₜ₋₁ under S1, where it is independent of the Y
/// history: `exp(−½ νᵀΣν)` with the Toeplitz autocovariance Σ.
pub fn oracle_phi_s1(spec: &DgpSpec, nu: &[f64]) -> Result<Complex64> {
    if spec.kind != DgpKind::S1 {
        return Err(Error::Unsupported(format!(
            "closed-form conditional CF is only available for S1, not {}",
            spec.kind
        )));
    }
    if nu.len() != spec.la {
        return Err(Error::DimensionMismatch {
            expected: spec.la,
            actual: nu.len(),
        });
    }
    let gamma = x_autocovariance(spec)?;
    let mut quad = 0.0;
    for (i, a) in nu.iter().enumerate() {
        for (j, b) in nu.iter().enumerate() {
            quad += a * b * gamma[i.abs_diff(j)];
        }
    }
    Ok(Complex64::new((-0.5 * quad).exp(), 0.0))
}
