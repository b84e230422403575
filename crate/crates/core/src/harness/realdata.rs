use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{run_single_test, timed, TestConfig, TestResult};
use crate::error::{Error, Result};
use crate::lagcore::{percent_change, scale_volume, TimeSeriesPair};
use crate::seed;

/// `x_causes_y` tests price → volume (price as X, volume as Y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    XCausesY,
    YCausesX,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Self::XCausesY, Self::YCausesX];
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::XCausesY => "x_causes_y",
            Self::YCausesX => "y_causes_x",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x_causes_y" => Ok(Self::XCausesY),
            "y_causes_x" => Ok(Self::YCausesX),
            other => Err(Error::InvalidConfig(format!(
                "unknown direction {other:?} (expected x_causes_y or y_causes_x)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealDataJob {
    pub input: PathBuf,
    pub directions: Vec<Direction>,
    pub lags: Vec<usize>,
    pub percent_change: bool,
    /// Applied to the (transformed) volume series.
    pub volume_divisor: f64,
}

impl Default for RealDataJob {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            directions: Direction::BOTH.to_vec(),
            lags: (1..=10).collect(),
            percent_change: true,
            volume_divisor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceVolume {
    pub dates: Vec<NaiveDate>,
    pub price: Vec<f64>,
    pub volume: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagOutcome {
    pub direction: Direction,
    pub lag: usize,
    /// Length of the transformed series.
    pub t: usize,
    pub result: TestResult,
    pub runtime_ms: Option<f64>,
}

fn data_error(line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        line,
        message: message.into(),
    }
}

fn positive_field(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| data_error(line, format!("{name} {field:?} is not a number")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(data_error(line, format!("{name} must be positive and finite, got {v}")));
    }
    Ok(v)
}

/// Parses `date,price,volume` with a header row, ISO dates in strictly
/// increasing order, and positive prices and volumes. Errors carry the
/// 1-based line number.
pub fn parse_price_volume_csv(text: &str) -> Result<PriceVolume> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let csv_error = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        data_error(line, e.to_string())
    };
    let header = reader.headers().map_err(csv_error)?.clone();
    let expected = ["date", "price", "volume"];
    if header.len() != 3 || !header.iter().zip(expected).all(|(h, e)| h.eq_ignore_ascii_case(e)) {
        return Err(data_error(1, "header must be date,price,volume"));
    }
    let mut out = PriceVolume {
        dates: Vec::new(),
        price: Vec::new(),
        volume: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|_| data_error(line, format!("date {:?} is not YYYY-MM-DD", &record[0])))?;
        if out.dates.last().is_some_and(|prev| *prev >= date) {
            return Err(data_error(line, "dates must be strictly increasing"));
        }
        out.dates.push(date);
        out.price.push(positive_field(&record[1], "price", line)?);
        out.volume.push(positive_field(&record[2], "volume", line)?);
    }
    if out.dates.is_empty() {
        return Err(data_error(1, "no data rows"));
    }
    Ok(out)
}

pub fn load_price_volume_csv(path: &Path) -> Result<PriceVolume> {
    parse_price_volume_csv(&std::fs::read_to_string(path)?)
}

/// Returns the (price, volume) series fed to the test.
pub fn transform_series(data: &PriceVolume, job: &RealDataJob) -> Result<(Vec<f64>, Vec<f64>)> {
    let (price, volume) = if job.percent_change {
        (percent_change(&data.price)?, percent_change(&data.volume)?)
    } else {
        (data.price.clone(), data.volume.clone())
    };
    Ok((price, scale_volume(&volume, job.volume_divisor)?))
}

fn lag_seed(master: u64, direction: Direction, lag: usize) -> u64 {
    seed::derive(seed::domain(master, &direction.to_string()), &[lag as u64])
}

/// Full test for every requested direction and lag, directions outermost.
pub fn run_price_volume(data: &PriceVolume, job: &RealDataJob, cfg: &TestConfig) -> Result<Vec<LagOutcome>> {
    if job.lags.is_empty() || job.directions.is_empty() {
        return Err(Error::InvalidConfig("lag sweep and directions must be nonempty".into()));
    }
    let (price, volume) = transform_series(data, job)?;
    let forward = TimeSeriesPair::new(price, volume)?;
    let mut out = Vec::new();
    for &direction in &job.directions {
        let series = match direction {
            Direction::XCausesY => forward.clone(),
            Direction::YCausesX => forward.swapped(),
        };
        for &lag in &job.lags {
            let lag_cfg = TestConfig {
                la: lag,
                p: None,
                q: None,
                seed: lag_seed(cfg.seed, direction, lag),
                ..cfg.clone()
            };
            let (result, runtime_ms) = timed(|| run_single_test(&series, &lag_cfg))?;
            out.push(LagOutcome {
                direction,
                lag,
                t: series.len(),
                result,
                runtime_ms,
            });
        }
    }
    Ok(out)
}

pub fn run_real_data(job: &RealDataJob, cfg: &TestConfig) -> Result<Vec<LagOutcome>> {
    run_price_volume(&load_price_volume_csv(&job.input)?, job, cfg)
}

#[cfg(test)]
mod tests {
    use super::super::tests::quick_config;
    use super::*;

    const SAMPLE: &str = "date,price,volume\n2024-01-02,100,1000\n2024-01-03,101,1100\n2024-01-04,99.99,990\n";

    #[test]
    fn parses_sample() {
        let d = parse_price_volume_csv(SAMPLE).unwrap();
        assert_eq!(d.price, vec![100.0, 101.0, 99.99]);
        assert_eq!(d.dates[0], NaiveDate::from_ymd_opt(2024, 1, 2).unwrap());
        let job = RealDataJob::default();
        let (p, v) = transform_series(&d, &job).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] + 1.0).abs() < 1e-12);
    }

    fn line_of(text: &str) -> usize {
        match parse_price_volume_csv(text).unwrap_err() {
            Error::Data { line, .. } => line,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        assert_eq!(line_of("date,price,volume\n2024-01-02,100,1000\n2024-01-03,abc,5\n"), 3);
        assert_eq!(line_of("date,price,volume\n2024-01-02,100,1000\n2024-01-03,100\n"), 3);
        assert_eq!(line_of("date,price,volume\n2024-13-02,100,1000\n"), 2);
        assert_eq!(
            line_of("date,price,volume\n2024-01-02,100,1000\n2024-01-02,100,1000\n"),
            3
        );
        assert_eq!(line_of("date,price,volume\n2024-01-02,100,0\n"), 2);
        assert_eq!(line_of("date,close,volume\n2024-01-02,100,1\n"), 1);
        assert_eq!(line_of("date,price,volume\n"), 1);
    }

    #[test]
    fn duplicated_input_gives_identical_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("date,price,volume\n");
        let mut rng = seed::rng(4);
        let (mut p, mut v) = (100.0f64, 1000.0f64);
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        for i in 0..120 {
            use rand::Rng as _;
            p *= 1.0 + rng.random_range(-0.02..0.02);
            v *= 1.0 + rng.random_range(-0.2..0.2);
            let d = start + chrono::Days::new(i);
            text.push_str(&format!("{d},{p},{v}\n"));
        }
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, &text).unwrap();
        std::fs::write(&b, &text).unwrap();
        let cfg = quick_config(1);
        let job = |input: PathBuf| RealDataJob {
            input,
            lags: vec![1, 2],
            ..RealDataJob::default()
        };
        let ra = run_real_data(&job(a), &cfg).unwrap();
        let rb = run_real_data(&job(b), &cfg).unwrap();
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(
                (x.direction, x.lag, x.t, &x.result),
                (y.direction, y.lag, y.t, &y.result)
            );
        }
        assert_eq!(ra.len(), 4);
        assert_eq!((ra[0].direction, ra[0].lag), (Direction::XCausesY, 1));
        assert_eq!((ra[3].direction, ra[3].lag), (Direction::YCausesX, 2));
        assert_ne!(ra[0].result.seed, ra[1].result.seed);
    }

    #[test]
    fn direction_names() {
        for d in Direction::BOTH {
            assert_eq!(d.to_string().parse::<Direction>().unwrap(), d);
        }
        assert!("both".parse::<Direction>().is_err());
    }
}
