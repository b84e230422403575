use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellResult, Diagnostics, Direction, LagOutcome, RejectionTable, StatisticMode, TestConfig};
use crate::dgp::DgpKind;
use crate::error::{Error, Result};

/// One line of the results file. Absent values are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestRecord {
    pub dgp_or_file: String,
    #[serde(rename = "La")]
    pub la: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Replication seed for simulations, test seed for real data.
    pub seed: u64,
    pub mode: StatisticMode,
    pub direction: Option<Direction>,
    pub replication: Option<usize>,
    #[serde(rename = "KS")]
    pub ks: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub diverged_redraws: Option<usize>,
    pub runtime_ms: Option<f64>,
    pub rows: usize,
    pub process_re: Vec<f64>,
    pub process_im: Vec<f64>,
    pub ks_star: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub config: TestConfig,
}

/// Records in grid, replication, mode order. Runtimes are kept only when
/// `timing` is set, so that untimed files are reproducible byte for byte.
pub fn records_from_table(table: &RejectionTable, timing: bool) -> Vec<TestRecord> {
    table
        .replications
        .iter()
        .flat_map(|rep| {
            rep.results.iter().map(move |r| TestRecord {
                dgp_or_file: rep.cell.dgp.to_string(),
                la: rep.cell.la,
                t: rep.cell.t,
                seed: rep.seed,
                mode: r.mode,
                direction: None,
                replication: Some(rep.index),
                ks: r.ks,
                p_value: r.p_value,
                reject: r.reject,
                alpha: r.alpha,
                diverged_redraws: Some(rep.diverged_redraws),
                runtime_ms: rep.runtime_ms.filter(|_| timing),
                rows: r.rows,
                process_re: r.process_re.clone(),
                process_im: r.process_im.clone(),
                ks_star: r.ks_star.clone(),
                diagnostics: r.diagnostics.clone(),
                config: r.config.clone(),
            })
        })
        .collect()
}

pub fn records_from_outcomes(file: &str, outcomes: &[LagOutcome], timing: bool) -> Vec<TestRecord> {
    outcomes
        .iter()
        .map(|o| {
            let r = &o.result;
            TestRecord {
                dgp_or_file: file.to_string(),
                la: o.lag,
                t: o.t,
                seed: r.seed,
                mode: r.mode,
                direction: Some(o.direction),
                replication: None,
                ks: r.ks,
                p_value: r.p_value,
                reject: r.reject,
                alpha: r.alpha,
                diverged_redraws: None,
                runtime_ms: o.runtime_ms.filter(|_| timing),
                rows: r.rows,
                process_re: r.process_re.clone(),
                process_im: r.process_im.clone(),
                ks_star: r.ks_star.clone(),
                diagnostics: r.diagnostics.clone(),
                config: r.config.clone(),
            }
        })
        .collect()
}

/// JSON lines, one record per line.
pub fn records_to_string(records: &[TestRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[TestRecord]) -> Result<()> {
    std::fs::write(path, records_to_string(records)?)?;
    Ok(())
}

pub fn parse_records(text: &str) -> Result<Vec<TestRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<TestRecord>> {
    parse_records(&std::fs::read_to_string(path)?)
}

fn mode_suffix(mode: StatisticMode) -> &'static str {
    match mode {
        StatisticMode::DoublyRobust => "",
        StatisticMode::Naive => " (naive)",
    }
}

/// Rejection rates with rows `(La, T)` and one column per DGP and mode.
/// Entries are `rate (s.e.)`; `*` marks cells with more than 10% redraws.
pub fn experiment_table(cells: &[CellResult]) -> String {
    let mut columns: Vec<(DgpKind, StatisticMode)> = Vec::new();
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for c in cells {
        if !columns.contains(&(c.dgp, c.mode)) {
            columns.push((c.dgp, c.mode));
        }
        if !rows.contains(&(c.la, c.t)) {
            rows.push((c.la, c.t));
        }
    }
    rows.sort_unstable();
    let mut out = String::from("| La | T |");
    for (dgp, mode) in &columns {
        let _ = write!(out, " {dgp}{} |", mode_suffix(*mode));
    }
    out.push_str("\n|---:|---:|");
    out.push_str(&"---:|".repeat(columns.len()));
    out.push('\n');
    for (la, t) in &rows {
        let _ = write!(out, "| {la} | {t} |");
        for (dgp, mode) in &columns {
            match cells
                .iter()
                .find(|c| c.la == *la && c.t == *t && c.dgp == *dgp && c.mode == *mode)
            {
                Some(c) => {
                    let flag = if c.flagged { "*" } else { "" };
                    let _ = write!(out, " {:.3} ({:.3}){flag} |", c.rate, c.std_error);
                }
                None => out.push_str(" / |"),
            }
        }
        out.push('\n');
    }
    if cells.iter().any(|c| c.flagged) {
        out.push_str("\n\\* more than 10% of draws were redrawn after diverging\n");
    }
    out
}

struct RealRow<'a> {
    file: &'a str,
    direction: Direction,
    lag: usize,
    reject: bool,
    p_value: f64,
}

fn real_rows_table(rows: &[RealRow<'_>]) -> String {
    let mut lags: Vec<usize> = rows.iter().map(|r| r.lag).collect();
    lags.sort_unstable();
    lags.dedup();
    let mut keys: Vec<(Direction, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.direction, r.file)) {
            keys.push((r.direction, r.file));
        }
    }
    let mut out = String::from("| Direction | File |");
    for lag in &lags {
        let _ = write!(out, " {lag} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&":---:|".repeat(lags.len()));
    out.push('\n');
    for (direction, file) in &keys {
        let _ = write!(out, "| {direction} | {file} |");
        for lag in &lags {
            match rows
                .iter()
                .find(|r| r.direction == *direction && r.file == *file && r.lag == *lag)
            {
                Some(r) => {
                    let mark = if r.reject { "✓" } else { "✗" };
                    let _ = write!(out, " {mark} {:.3} |", r.p_value);
                }
                None => out.push_str(" / |"),
            }
        }
        out.push('\n');
    }
    out.push_str("\n✓ rejects non-causality, ✗ does not; numbers are bootstrap p-values\n");
    out
}

/// Reject/fail-to-reject by lag, one row per direction.
pub fn real_data_table(file: &str, outcomes: &[LagOutcome]) -> String {
    let rows: Vec<RealRow<'_>> = outcomes
        .iter()
        .map(|o| RealRow {
            file,
            direction: o.direction,
            lag: o.lag,
            reject: o.result.reject,
            p_value: o.result.p_value,
        })
        .collect();
    real_rows_table(&rows)
}

/// Rebuilds the markdown tables from records alone: simulation records are
/// aggregated into rejection rates, real-data records tabulated by lag.
pub fn records_table(records: &[TestRecord]) -> Result<String> {
    let mut cells: Vec<CellResult> = Vec::new();
    let mut real = Vec::new();
    for r in records {
        if r.direction.is_some() || r.replication.is_none() {
            real.push(RealRow {
                file: &r.dgp_or_file,
                direction: r.direction.unwrap_or(Direction::XCausesY),
                lag: r.la,
                reject: r.reject,
                p_value: r.p_value,
            });
            continue;
        }
        let dgp: DgpKind = r.dgp_or_file.parse()?;
        let pos = match cells
            .iter()
            .position(|c| c.dgp == dgp && c.la == r.la && c.t == r.t && c.mode == r.mode)
        {
            Some(i) => i,
            None => {
                cells.push(CellResult {
                    dgp,
                    la: r.la,
                    t: r.t,
                    mode: r.mode,
                    replications: 0,
                    rejections: 0,
                    rate: 0.0,
                    std_error: 0.0,
                    diverged_redraws: 0,
                    flagged: false,
                });
                cells.len() - 1
            }
        };
        let cell = &mut cells[pos];
        cell.replications += 1;
        cell.rejections += usize::from(r.reject);
        cell.diverged_redraws += r.diverged_redraws.unwrap_or(0);
    }
    let cells: Vec<CellResult> = cells
        .into_iter()
        .map(|mut c| {
            let n = c.replications as f64;
            c.rate = c.rejections as f64 / n;
            c.std_error = (c.rate * (1.0 - c.rate) / n).sqrt();
            c.flagged = c.diverged_redraws * 10 > c.replications;
            c
        })
        .collect();
    let mut out = String::new();
    if !cells.is_empty() {
        out.push_str(&experiment_table(&cells));
    }
    if !real.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&real_rows_table(&real));
    }
    Ok(out)
}

/// Writes `results.jsonl` and `table.md` into `dir`, creating it if needed.
pub fn emit_report(dir: &Path, records: &[TestRecord]) -> Result<(PathBuf, PathBuf)> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no results to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let results = dir.join("results.jsonl");
    let table = dir.join("table.md");
    write_records(&results, records)?;
    std::fs::write(&table, records_table(records)?)?;
    Ok((results, table))
}
