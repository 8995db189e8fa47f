//! Solver runs and parameter sweeps over synthetic problems.
//!
//! Every cell (sweep value, seed, solver) is independent. Cells run on one
//! bounded rayon pool that the solvers also use for their batch-local work,
//! and results come back in grid order whatever the scheduling.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use dspl::datagen::{self, Corruption};
use dspl::{
    feature_count, fit_dspl, fit_ols, fit_spl, metrics, with_workers, BatchF64, LinearSquared,
    RunReport,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SolverKind};
use crate::csvio::format_number;

/// What one solver produced.
#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub w: Vec<f64>,
    /// Instance weights; `None` for OLS.
    pub v: Option<Vec<Vec<f64>>>,
    pub report: Option<RunReport>,
    /// Inner ADMM passes for DSPL, rounds for SPL, 1 for OLS.
    pub iterations: usize,
    pub wall_time: Duration,
    /// Final augmented Lagrangian (DSPL) or objective (SPL).
    pub objective: Option<f64>,
}

/// Runs one solver on `batches` with the experiment's settings.
pub fn run_solver(
    kind: SolverKind,
    batches: &[BatchF64],
    config: &ExperimentConfig,
) -> anyhow::Result<SolverOutcome> {
    let p = feature_count(batches)?;
    let start = Instant::now();
    let outcome = match kind {
        SolverKind::Dspl | SolverKind::Spl => {
            let fit = if kind == SolverKind::Dspl {
                fit_dspl(batches, &config.dspl_params(batches, p), &LinearSquared)?
            } else {
                fit_spl(batches, &config.spl_params(batches, p), &LinearSquared)?
            };
            let iterations = match kind {
                SolverKind::Dspl => fit.report.total_inner_iterations(),
                _ => fit.report.rounds.len(),
            };
            SolverOutcome {
                objective: fit.report.rounds.last().map(|r| r.lagrangian),
                iterations,
                wall_time: fit.report.wall_time,
                w: fit.w,
                v: Some(fit.v),
                report: Some(fit.report),
            }
        }
        SolverKind::Ols => SolverOutcome {
            w: fit_ols(batches, config.ols_ridge)?,
            v: None,
            report: None,
            iterations: 1,
            wall_time: start.elapsed(),
            objective: None,
        },
    };
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Corruption,
    Batches,
    Lambda,
}

impl SweepKind {
    /// Name of the swept column.
    pub fn key_column(self) -> &'static str {
        match self {
            SweepKind::Corruption => "ratio",
            SweepKind::Batches => "corrupted_batches",
            SweepKind::Lambda => "tau_lambda",
        }
    }
}

/// One sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub key: f64,
    pub solver: SolverKind,
    pub seed: u64,
    pub error: Option<f64>,
    pub lagrangian: Option<f64>,
    pub wall_time: f64,
    pub iterations: usize,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

impl Row {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub rows: Vec<Row>,
}

impl SweepTable {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(Row::ok)
    }

    /// Distinct keys in first-appearance order.
    pub fn keys(&self) -> Vec<f64> {
        let mut keys: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&r.key) {
                keys.push(r.key);
            }
        }
        keys
    }

    pub fn solvers(&self) -> Vec<SolverKind> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.solver) {
                out.push(r.solver);
            }
        }
        out
    }

    fn mean_of(
        &self,
        key: f64,
        solver: SolverKind,
        pick: impl Fn(&Row) -> Option<f64>,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.key == key && r.solver == solver)
            .filter_map(pick)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean recovery error over the successful seeds of one cell.
    pub fn mean_error(&self, key: f64, solver: SolverKind) -> Option<f64> {
        self.mean_of(key, solver, |r| r.error)
    }

    pub fn mean_lagrangian(&self, key: f64, solver: SolverKind) -> Option<f64> {
        self.mean_of(key, solver, |r| r.lagrangian)
    }

    /// Writes the table as CSV. Numbers use 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let lagrangian = self.kind == SweepKind::Lambda;
        let mut header = vec![self.kind.key_column(), "solver", "seed", "error"];
        if lagrangian {
            header.push("lagrangian");
        }
        header.extend(["wall_time", "iterations", "status"]);
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(format_number).unwrap_or_default();
        for r in &self.rows {
            let key = match self.kind {
                SweepKind::Batches => format!("{}", r.key as usize),
                _ => format_number(r.key),
            };
            let mut rec = vec![key, r.solver.to_string(), r.seed.to_string(), opt(r.error)];
            if lagrangian {
                rec.push(opt(r.lagrangian));
            }
            rec.extend([
                format_number(r.wall_time),
                r.iterations.to_string(),
                r.status.clone(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        Ok(())
    }

    /// Mean error per (key, solver) as a text grid, one row per solver.
    pub fn summary(&self) -> String {
        let keys = self.keys();
        let mut s = format!("{:<8}", "solver");
        for k in &keys {
            s += &format!(" {:>10}", trim_key(*k));
        }
        s.push('\n');
        for solver in self.solvers() {
            s += &format!("{:<8}", solver.to_string());
            for k in &keys {
                match self.mean_error(*k, solver) {
                    Some(e) => s += &format!(" {e:>10.4}"),
                    None => s += &format!(" {:>10}", "-"),
                }
            }
            s.push('\n');
        }
        s
    }
}

fn trim_key(k: f64) -> String {
    let s = format!("{k:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// A generated problem and the solvers to run on it.
struct Cell {
    key: f64,
    seed: u64,
    corruption: Corruption,
    solver: SolverKind,
    config: ExperimentConfig,
}

fn run_cell(cell: &Cell, base: &ExperimentConfig) -> Row {
    let spec = base.synthetic().expect("sweeps are synthetic");
    let mut row = Row {
        key: cell.key,
        solver: cell.solver,
        seed: cell.seed,
        error: None,
        lagrangian: None,
        wall_time: 0.0,
        iterations: 0,
        status: "ok".into(),
    };
    let attempt = || -> anyhow::Result<(f64, SolverOutcome)> {
        let data = datagen::generate::<f64>(&spec.config(cell.corruption.clone(), cell.seed))?;
        let out = run_solver(cell.solver, &data.batches, &cell.config)?;
        Ok((metrics::l2_recovery_error(&out.w, &data.w_star)?, out))
    };
    match attempt() {
        Ok((error, out)) => {
            row.error = Some(error);
            row.lagrangian = out.objective;
            row.wall_time = out.wall_time.as_secs_f64();
            row.iterations = out.iterations;
        }
        Err(e) => row.status = format!("error: {e:#}"),
    }
    row
}

fn run_cells(
    kind: SweepKind,
    cells: Vec<Cell>,
    config: &ExperimentConfig,
) -> anyhow::Result<SweepTable> {
    let rows = with_workers(config.workers, || {
        cells.par_iter().map(|c| run_cell(c, config)).collect()
    })?;
    Ok(SweepTable { kind, rows })
}

fn require_synthetic(config: &ExperimentConfig) -> anyhow::Result<()> {
    anyhow::ensure!(
        config.synthetic().is_some(),
        "sweeps need a synthetic problem"
    );
    Ok(())
}

/// Recovery error against a uniform corruption ratio, for every ratio × seed × solver.
pub fn run_sweep_corruption(config: &ExperimentConfig) -> anyhow::Result<SweepTable> {
    require_synthetic(config)?;
    let mut cells = Vec::new();
    for &ratio in &config.ratios {
        for &seed in &config.seeds {
            for &solver in &config.solvers {
                cells.push(Cell {
                    key: ratio,
                    seed,
                    corruption: Corruption::Uniform(ratio),
                    solver,
                    config: config.clone(),
                });
            }
        }
    }
    run_cells(SweepKind::Corruption, cells, config)
}

/// Per-batch corruption ratios with `k` batches at 0.9 and the rest at 0.1,
/// in an order shuffled by `seed`.
pub fn batch_ratios(k: usize, batches: usize, seed: u64) -> Vec<f64> {
    let mut ratios: Vec<f64> = (0..batches)
        .map(|i| if i < k { 0.9 } else { 0.1 })
        .collect();
    // separate from the generator's own streams, which start at 0 for the same seed
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    ratios.shuffle(&mut rng);
    ratios
}

/// Recovery error against the number of heavily corrupted batches.
pub fn run_sweep_batches(config: &ExperimentConfig) -> anyhow::Result<SweepTable> {
    require_synthetic(config)?;
    let m = config.synthetic().map_or(0, |s| s.batches);
    let mut cells = Vec::new();
    for &k in &config.corrupted_batches {
        anyhow::ensure!(k <= m, "{k} corrupted batches requested but only {m} exist");
        for &seed in &config.seeds {
            for &solver in &config.solvers {
                cells.push(Cell {
                    key: k as f64,
                    seed,
                    corruption: Corruption::PerBatch(batch_ratios(k, m, seed)),
                    solver,
                    config: config.clone(),
                });
            }
        }
    }
    run_cells(SweepKind::Batches, cells, config)
}

/// DSPL error and final Lagrangian against the pace cap `τ_λ` at a fixed
/// corruption ratio. `λ₀` is clipped to `τ_λ` where it would exceed it.
pub fn run_sweep_lambda(config: &ExperimentConfig) -> anyhow::Result<SweepTable> {
    require_synthetic(config)?;
    let lambda0 = config.params.lambda0.unwrap_or(0.1);
    let mut cells = Vec::new();
    for &tau in &config.taus {
        for &seed in &config.seeds {
            let mut cfg = config.clone();
            cfg.params.tau_lambda = Some(tau);
            cfg.params.lambda0 = Some(lambda0.min(tau));
            cells.push(Cell {
                key: tau,
                seed,
                corruption: Corruption::Uniform(config.lambda_ratio),
                solver: SolverKind::Dspl,
                config: cfg,
            });
        }
    }
    run_cells(SweepKind::Lambda, cells, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentFile, Mode};

    fn small(mode: Mode) -> ExperimentConfig {
        let file: ExperimentFile = toml::from_str(
            "seeds = [0, 1]\nworkers = 2\n[synthetic]\np = 3\nn = 120\nbatches = 4\n",
        )
        .unwrap();
        file.resolve(mode).unwrap()
    }

    #[test]
    fn corruption_grid_is_complete_and_ordered() {
        let mut c = small(Mode::SweepCorruption);
        c.ratios = vec![0.1, 0.4];
        let t = run_sweep_corruption(&c).unwrap();
        assert_eq!(t.rows.len(), 2 * 2 * 3);
        assert!(t.all_ok());
        assert_eq!(t.keys(), vec![0.1, 0.4]);
        assert_eq!(t.rows[0].solver, SolverKind::Dspl);
        assert_eq!(t.rows[2].solver, SolverKind::Ols);
        assert_eq!(t.rows[3].seed, 1);
        for s in [SolverKind::Dspl, SolverKind::Spl, SolverKind::Ols] {
            assert!(t.mean_error(0.4, s).is_some());
        }
        assert!(t.summary().contains("0.4"));
    }

    #[test]
    fn failures_become_rows() {
        let mut c = small(Mode::SweepCorruption);
        c.ratios = vec![0.2];
        c.params.mu = Some(0.5);
        let t = run_sweep_corruption(&c).unwrap();
        assert!(!t.all_ok());
        let bad: Vec<_> = t.rows.iter().filter(|r| !r.ok()).collect();
        assert_eq!(bad.len(), 2);
        assert!(bad
            .iter()
            .all(|r| r.solver == SolverKind::Dspl && r.error.is_none()));
        assert!(bad[0].status.contains("mu"));
    }

    #[test]
    fn batch_ratio_layout() {
        let r = batch_ratios(4, 10, 3);
        assert_eq!(r.iter().filter(|x| **x == 0.9).count(), 4);
        assert_eq!(r.iter().filter(|x| **x == 0.1).count(), 6);
        assert_eq!(r, batch_ratios(4, 10, 3));
        let orders: std::collections::HashSet<_> = (0..10)
            .map(|s| format!("{:?}", batch_ratios(4, 10, s)))
            .collect();
        assert!(orders.len() > 1);
    }

    #[test]
    fn csv_has_schema_columns() {
        let mut c = small(Mode::SweepLambda);
        c.taus = vec![0.05, 0.5];
        c.seeds = vec![0];
        let t = run_sweep_lambda(&c).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "tau_lambda,solver,seed,error,lagrangian,wall_time,iterations,status"
        );
        assert_eq!(lines.count(), 2);
        assert!(t.rows.iter().all(|r| r.lagrangian.is_some()));
    }
}
