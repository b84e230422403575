use serde::{Deserialize, Serialize};

use super::{run_modes, timed, StatisticMode, TestConfig, TestResult};
use crate::dgp::{generate, preset, DgpKind, DgpSpec};
use crate::error::{Error, Result};
use crate::seed;

/// Consecutive divergent draws tolerated before a replication fails.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub dgp: DgpKind,
    pub la: usize,
    pub t: usize,
}

impl CellSpec {
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.dgp, self.la, self.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub grid: Vec<CellSpec>,
    pub replications: usize,
    /// Statistics evaluated on every draw from shared fits. `config.mode`
    /// is ignored here.
    pub modes: Vec<StatisticMode>,
    pub seed: u64,
    /// `la` is overridden per cell.
    pub config: TestConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            grid: Vec::new(),
            replications: 200,
            modes: vec![StatisticMode::DoublyRobust],
            seed: 0,
            config: TestConfig {
                bootstrap: 500,
                ..TestConfig::default()
            },
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("experiment grid is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("need at least one replication".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig("no statistic mode requested".into()));
        }
        for cell in &self.grid {
            preset(cell.dgp, cell.la)?;
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dgp: DgpKind,
    pub la: usize,
    pub t: usize,
    pub mode: StatisticMode,
    pub replications: usize,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial Monte-Carlo standard error of `rate`.
    pub std_error: f64,
    pub diverged_redraws: usize,
    /// More than 10% of draws had to be redrawn.
    pub flagged: bool,
}

/// One replication: its seed, the redraws it needed, and one result per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub cell: CellSpec,
    pub index: usize,
    pub seed: u64,
    pub diverged_redraws: usize,
    pub results: Vec<TestResult>,
    /// Covers every mode of the replication.
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionTable {
    pub cells: Vec<CellResult>,
    pub replications: Vec<Replication>,
}

impl RejectionTable {
    pub fn rate(&self, dgp: DgpKind, la: usize, t: usize, mode: StatisticMode) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.dgp == dgp && c.la == la && c.t == t && c.mode == mode)
            .map(|c| c.rate)
    }
}

/// Seed of replication `rep` (attempt `attempt`) in `cell`; it depends on
/// the cell itself, not on its position in the grid.
pub fn cell_seed(master: u64, cell: &CellSpec, rep: usize, attempt: usize) -> u64 {
    seed::derive(master, &[seed::label(&cell.key()), rep as u64, attempt as u64])
}

fn replicate(
    spec: &DgpSpec,
    cell: &CellSpec,
    plan: &ExperimentPlan,
    cfg: &TestConfig,
    rep: usize,
) -> Result<Replication> {
    for attempt in 0..=MAX_REDRAWS {
        let s = cell_seed(plan.seed, cell, rep, attempt);
        let series = match generate(spec, cell.t, &mut seed::rng(seed::domain(s, "data"))) {
            Ok(v) => v,
            Err(e) if e.is_simulation_divergence() => continue,
            Err(e) => return Err(e),
        };
        let test_cfg = TestConfig {
            seed: seed::domain(s, "test"),
            ..cfg.clone()
        };
        let (results, runtime_ms) = timed(|| run_modes(&series, &test_cfg, &plan.modes))?;
        return Ok(Replication {
            cell: cell.clone(),
            index: rep,
            seed: s,
            diverged_redraws: attempt,
            results,
            runtime_ms,
        });
    }
    Err(Error::Unsupported(format!(
        "cell {} replication {rep} diverged {MAX_REDRAWS} times in a row",
        cell.key()
    )))
}

/// Runs all replications of a single cell.
pub fn run_cell(plan: &ExperimentPlan, cell: &CellSpec) -> Result<(Vec<CellResult>, Vec<Replication>)> {
    run_cell_with(plan, cell, &preset(cell.dgp, cell.la)?)
}

fn is_flagged(redraws: usize, replications: usize) -> bool {
    redraws * 10 > replications
}

fn run_cell_with(
    plan: &ExperimentPlan,
    cell: &CellSpec,
    spec: &DgpSpec,
) -> Result<(Vec<CellResult>, Vec<Replication>)> {
    let cfg = TestConfig {
        la: cell.la,
        p: None,
        q: None,
        ..plan.config.clone()
    };
    #[cfg(feature = "parallel")]
    let reps: Vec<Replication> = {
        use rayon::prelude::*;
        (0..plan.replications)
            .into_par_iter()
            .map(|rep| replicate(spec, cell, plan, &cfg, rep))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let reps: Vec<Replication> = (0..plan.replications)
        .map(|rep| replicate(spec, cell, plan, &cfg, rep))
        .collect::<Result<_>>()?;

    let redraws: usize = reps.iter().map(|r| r.diverged_redraws).sum();
    let n = plan.replications;
    let cells = plan
        .modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| {
            let rejections = reps.iter().filter(|r| r.results[m].reject).count();
            let rate = rejections as f64 / n as f64;
            CellResult {
                dgp: cell.dgp,
                la: cell.la,
                t: cell.t,
                mode,
                replications: n,
                rejections,
                rate,
                std_error: (rate * (1.0 - rate) / n as f64).sqrt(),
                diverged_redraws: redraws,
                flagged: is_flagged(redraws, n),
            }
        })
        .collect();
    Ok((cells, reps))
}

/// Cells run in grid order; each cell's numbers are independent of the rest
/// of the grid.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<RejectionTable> {
    plan.validate()?;
    let mut table = RejectionTable {
        cells: Vec::new(),
        replications: Vec::new(),
    };
    for cell in &plan.grid {
        let (cells, reps) = run_cell(plan, cell)?;
        table.cells.extend(cells);
        table.replications.extend(reps);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::super::tests::quick_config;
    use super::*;

    #[test]
    fn documented_plan_parses() {
        let text = "replications = 200\nseed = 1\nmodes = [\"doubly_robust\", \"naive\"]\n\
            grid = [\n  { dgp = \"S1\", la = 1, t = 500 },\n  { dgp = \"P3\", la = 5, t = 2000 },\n]\n\n\
            [config]\nbootstrap = 500\nfreq_bounds = { lo = -1.0, hi = 1.0 }\n\n[config.mdn]\ncomponents = 10\n";
        let p: ExperimentPlan = toml::from_str(text).unwrap();
        p.validate().unwrap();
        assert_eq!(
            p.grid[1],
            CellSpec {
                dgp: DgpKind::P3,
                la: 5,
                t: 2000
            }
        );
        assert_eq!(p.modes, vec![StatisticMode::DoublyRobust, StatisticMode::Naive]);
    }

    fn plan(grid: Vec<CellSpec>, reps: usize) -> ExperimentPlan {
        ExperimentPlan {
            grid,
            replications: reps,
            modes: vec![StatisticMode::DoublyRobust, StatisticMode::Naive],
            seed: 11,
            config: quick_config(1),
        }
    }

    fn cell(dgp: DgpKind, la: usize, t: usize) -> CellSpec {
        CellSpec { dgp, la, t }
    }

    #[test]
    fn forced_reject_fixture() {
        // α just below one rejects unless every bootstrap draw reaches KS
        let mut p = plan(vec![cell(DgpKind::P4, 1, 120)], 1);
        p.config.alpha = 0.999_999;
        let table = run_experiment(&p).unwrap();
        assert_eq!(table.cells.len(), 2);
        assert!(table.cells.iter().all(|c| c.rate == 1.0 && c.std_error == 0.0));
    }

    #[test]
    fn cells_are_independent_of_grid() {
        let a = cell(DgpKind::S1, 1, 100);
        let b = cell(DgpKind::P1, 2, 100);
        let grid = run_experiment(&plan(vec![b.clone(), a.clone()], 3)).unwrap();
        let alone = run_experiment(&plan(vec![a], 3)).unwrap();
        assert_eq!(grid.cells[2..], alone.cells[..]);
        for (g, a) in grid.replications[3..].iter().zip(&alone.replications) {
            assert_eq!((g.seed, &g.results), (a.seed, &a.results));
        }
        assert_eq!(grid.cells.len(), 4);
        assert!(grid.cells.iter().all(|c| (0.0..=1.0).contains(&c.rate)));
        assert!(grid.rate(DgpKind::P1, 2, 100, StatisticMode::Naive).is_some());
    }

    #[test]
    fn seeds_differ_across_cells_and_reps() {
        let a = cell(DgpKind::S1, 1, 100);
        let b = cell(DgpKind::S1, 1, 101);
        assert_ne!(cell_seed(0, &a, 0, 0), cell_seed(0, &b, 0, 0));
        assert_ne!(cell_seed(0, &a, 0, 0), cell_seed(0, &a, 1, 0));
        assert_ne!(cell_seed(0, &a, 0, 0), cell_seed(0, &a, 0, 1));
        assert_ne!(cell_seed(0, &a, 0, 0), cell_seed(1, &a, 0, 0));
    }

    #[test]
    fn divergent_draws_are_redrawn_and_counted() {
        // random walk with huge innovations crosses the guard on many paths
        let mut spec = preset(DgpKind::S1, 1).unwrap();
        spec.b = vec![2.0];
        spec.innovation_variance = 2e9;
        let c = cell(DgpKind::S1, 1, 100);
        let mut p = plan(vec![c.clone()], 6);
        p.modes = vec![StatisticMode::Naive];
        let (cells, reps) = run_cell_with(&p, &c, &spec).unwrap();
        let total: usize = reps.iter().map(|r| r.diverged_redraws).sum();
        assert!(total > 0);
        assert_eq!(cells[0].diverged_redraws, total);
        assert_eq!(cells[0].flagged, is_flagged(total, 6));
        for r in &reps {
            assert_eq!(r.seed, cell_seed(p.seed, &c, r.index, r.diverged_redraws));
        }
        assert!(!is_flagged(20, 200) && is_flagged(21, 200));
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(run_experiment(&plan(vec![], 1)).is_err());
        assert!(run_experiment(&plan(vec![cell(DgpKind::S1, 1, 100)], 0)).is_err());
        assert!(run_experiment(&plan(vec![cell(DgpKind::S1, 9, 100)], 1)).is_err());
        let mut p = plan(vec![cell(DgpKind::S1, 1, 100)], 1);
        p.modes.clear();
        assert!(run_experiment(&p).is_err());
    }
}
