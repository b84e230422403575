//! `drgc`: command-line driver for the doubly robust Granger causality test.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drgc::dgp::preset_from_key;
use drgc::harness::{
    emit_report, experiment_table, load_price_volume_csv, read_records, real_data_table, records_from_outcomes,
    records_from_table, records_table, records_to_string, run_experiment, run_price_volume, run_single_test, Direction,
    ExperimentPlan, RealDataJob, StatisticMode, TestConfig, TestRecord,
};
use drgc::lagcore::TimeSeriesPair;
use drgc::{seed, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "drgc", version, about = "Doubly robust Granger causality test")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment plan.
    Simulate(SimulateArgs),
    /// Test one pair of series.
    Test(TestArgs),
    /// Price/volume lag sweep on a date,price,volume CSV.
    Realdata(RealdataArgs),
    /// Rebuild the markdown table from a results file.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Statistic: dr, naive, or both (simulate only).
    #[arg(long)]
    mode: Option<String>,
    /// Bootstrap replications B.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Frequency sampling interval, as lo,hi.
    #[arg(long, value_name = "LO,HI", allow_hyphen_values = true)]
    freq_bounds: Option<String>,
    /// Output directory for results.jsonl and table.md.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock runtimes (results are then no longer byte-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Replace the lag order of every grid cell, e.g. 1,3.
    #[arg(long)]
    lags: Option<String>,
    /// Monte-Carlo replications R.
    #[arg(long)]
    reps: Option<usize>,
    /// R = 1000 and B = 1000 unless given explicitly.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with header x,y.
    #[arg(long, conflicts_with = "dgp")]
    input: Option<PathBuf>,
    /// Simulate the series from a design such as S1:1.
    #[arg(long, requires = "length")]
    dgp: Option<String>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    lags: Option<usize>,
}

#[derive(Args)]
struct RealdataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// x_causes_y, y_causes_x or both.
    #[arg(long, default_value = "both")]
    direction: String,
    /// Lag sweep such as 1-10 or 1,2,5.
    #[arg(long, default_value = "1-10")]
    lags: String,
    #[arg(long, default_value_t = 10.0)]
    volume_divisor: f64,
    /// Use raw levels instead of percent changes.
    #[arg(long)]
    levels: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// results.jsonl produced by another subcommand.
    #[arg(long)]
    input: PathBuf,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage(message: impl Into<String>) -> Error {
    Error::InvalidConfig(message.into())
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> drgc::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_bounds(text: &str) -> drgc::Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lo, hi] => match (lo.parse(), hi.parse()) {
            (Ok(lo), Ok(hi)) => Ok((lo, hi)),
            _ => Err(usage(format!("--freq-bounds {text:?} is not two numbers"))),
        },
        _ => Err(usage("--freq-bounds expects lo,hi")),
    }
}

/// Accepts `a-b` ranges and comma lists.
fn parse_lags(text: &str) -> drgc::Result<Vec<usize>> {
    let bad = || usage(format!("cannot read lag list {text:?}"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.contains(&0) {
        return Err(usage("lag orders must be positive"));
    }
    Ok(out)
}

fn parse_modes(text: &str) -> drgc::Result<Vec<StatisticMode>> {
    if text == "both" {
        Ok(vec![StatisticMode::DoublyRobust, StatisticMode::Naive])
    } else {
        Ok(vec![text.parse()?])
    }
}

fn apply_common(cfg: &mut TestConfig, c: &Common) -> drgc::Result<()> {
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(b) = c.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(a) = c.alpha {
        cfg.alpha = a;
    }
    if let Some(text) = &c.freq_bounds {
        let (lo, hi) = parse_bounds(text)?;
        cfg.freq_bounds = drgc::drstat::FreqBounds::new(lo, hi)?;
    }
    Ok(())
}

fn finish(records: &[TestRecord], table: &str, out: Option<&Path>) -> drgc::Result<()> {
    print!("{table}");
    if let Some(dir) = out {
        let (results, table_path) = emit_report(dir, records)?;
        eprintln!("wrote {} and {}", results.display(), table_path.display());
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> drgc::Result<()> {
    let mut plan: ExperimentPlan = read_toml(args.common.config.as_deref())?;
    if args.full_scale {
        plan.replications = 1000;
        plan.config.bootstrap = 1000;
    }
    if let Some(r) = args.reps {
        plan.replications = r;
    }
    if let Some(s) = args.common.seed {
        plan.seed = s;
    }
    if let Some(m) = &args.common.mode {
        plan.modes = parse_modes(m)?;
    }
    // replication seeds come from the plan seed; config.seed is unused here
    apply_common(&mut plan.config, &args.common)?;
    if let Some(text) = &args.lags {
        let lags = parse_lags(text)?;
        let mut grid = Vec::new();
        for cell in &plan.grid {
            for &la in &lags {
                let mut c = cell.clone();
                c.la = la;
                if !grid.contains(&c) {
                    grid.push(c);
                }
            }
        }
        plan.grid = grid;
    }
    let table = run_experiment(&plan)?;
    let records = records_from_table(&table, args.common.timing);
    finish(&records, &experiment_table(&table.cells), args.common.out.as_deref())
}

fn read_xy_csv(path: &Path) -> drgc::Result<TimeSeriesPair> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data {
            line: 0,
            message: e.to_string(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() != 2 || !header[0].eq_ignore_ascii_case("x") || !header[1].eq_ignore_ascii_case("y") {
        return Err(Error::Data {
            line: 1,
            message: "header must be x,y".into(),
        });
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Data {
                line,
                message: format!("{s:?} is not a number"),
            })
        };
        x.push(num(&record[0])?);
        y.push(num(&record[1])?);
    }
    TimeSeriesPair::new(x, y)
}

fn test(args: TestArgs) -> drgc::Result<()> {
    let mut cfg: TestConfig = read_toml(args.common.config.as_deref())?;
    apply_common(&mut cfg, &args.common)?;
    if let Some(m) = &args.common.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(la) = args.lags {
        cfg.la = la;
    }
    let (series, label) = match (&args.input, &args.dgp) {
        (Some(path), None) => (read_xy_csv(path)?, path.display().to_string()),
        (None, Some(key)) => {
            let spec = preset_from_key(key)?;
            let length = args.length.expect("clap enforces --length with --dgp");
            let data = drgc::dgp::generate(&spec, length, &mut seed::rng(seed::domain(cfg.seed, "data")))?;
            (data, spec.kind.to_string())
        }
        _ => return Err(usage("give either --input or --dgp")),
    };
    let start = std::time::Instant::now();
    let result = run_single_test(&series, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let record = TestRecord {
        dgp_or_file: label,
        la: cfg.la,
        t: series.len(),
        seed: cfg.seed,
        mode: result.mode,
        direction: None,
        replication: None,
        ks: result.ks,
        p_value: result.p_value,
        reject: result.reject,
        alpha: result.alpha,
        diverged_redraws: None,
        runtime_ms: args.common.timing.then_some(elapsed),
        rows: result.rows,
        process_re: result.process_re.clone(),
        process_im: result.process_im.clone(),
        ks_star: result.ks_star.clone(),
        diagnostics: result.diagnostics.clone(),
        config: result.config.clone(),
    };
    let summary = format!(
        "KS = {:.6}, p = {:.4}, {} at alpha = {}\n",
        result.ks,
        result.p_value,
        if result.reject {
            "reject non-causality"
        } else {
            "fail to reject"
        },
        result.alpha
    );
    match &args.common.out {
        Some(_) => finish(std::slice::from_ref(&record), &summary, args.common.out.as_deref()),
        None => {
            print!("{}", records_to_string(std::slice::from_ref(&record))?);
            eprint!("{summary}");
            Ok(())
        }
    }
}

fn realdata(args: RealdataArgs) -> drgc::Result<()> {
    let mut cfg: TestConfig = read_toml(args.common.config.as_deref())?;
    apply_common(&mut cfg, &args.common)?;
    if let Some(m) = &args.common.mode {
        cfg.mode = m.parse()?;
    }
    let directions = if args.direction == "both" {
        Direction::BOTH.to_vec()
    } else {
        vec![args.direction.parse()?]
    };
    let job = RealDataJob {
        input: args.input.clone(),
        directions,
        lags: parse_lags(&args.lags)?,
        percent_change: !args.levels,
        volume_divisor: args.volume_divisor,
    };
    let data = load_price_volume_csv(&job.input)?;
    let outcomes = run_price_volume(&data, &job, &cfg)?;
    let label = job
        .input
        .file_name()
        .map_or_else(|| job.input.display().to_string(), |n| n.to_string_lossy().into_owned());
    let records = records_from_outcomes(&label, &outcomes, args.common.timing);
    finish(
        &records,
        &real_data_table(&label, &outcomes),
        args.common.out.as_deref(),
    )
}

fn report(args: ReportArgs) -> drgc::Result<()> {
    let records = read_records(&args.input)?;
    if records.is_empty() {
        return Err(Error::Data {
            line: 1,
            message: "results file has no records".into(),
        });
    }
    let table = records_table(&records)?;
    match args.out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => test(a),
        Command::Realdata(a) => realdata(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
