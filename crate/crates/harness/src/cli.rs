//! Command-line interface. Flags override `--config`, which overrides defaults.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dspl::datagen::{self, Corruption};
use dspl::{metrics, with_workers, BatchF64, LinearSquared, LossModel};
use serde::Serialize;

use crate::config::{
    DataSource, DatasetSpec, ExperimentConfig, ExperimentFile, Mode, ParamOverrides, Rho,
    SolverKind, SynthOverrides,
};
use crate::csvio::{self, load_csv_dataset, Truth};
use crate::sweep::{self, SweepTable};

#[derive(Debug, Parser)]
#[command(
    name = "dspl",
    version,
    about = "Distributed self-paced robust regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corrupted dataset as CSV plus a `.truth.json` sidecar.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit one solver on a CSV dataset or a generated problem.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Solver to run.
        #[arg(long, value_enum)]
        solver: Option<SolverKind>,
        /// Ground truth JSON for the recovery error (defaults to the dataset's sidecar if present).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Held-out CSV (same layout) for the mean absolute error.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Dump the run report as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Recovery error against the corruption ratio.
    SweepCorruption {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Recovery error against the number of 90%-corrupted batches.
    SweepBatches {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        corrupted_batches: Option<Vec<usize>>,
    },
    /// DSPL error and Lagrangian against the pace cap.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// Corruption ratio of the swept problem.
        #[arg(long)]
        lambda_ratio: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (CSV for generate and sweeps, JSON for fit). Sweeps print to stdout without it.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Solvers for sweeps, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub solvers: Option<Vec<SolverKind>>,
    /// Ridge coefficient of the OLS baseline.
    #[arg(long)]
    pub ols_ridge: Option<f64>,
    /// Base the synthetic problem on p = 100, n = 10 000.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub paper_scale: Option<bool>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub spl: SplArgs,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Synthetic problem")]
pub struct SynthArgs {
    #[arg(long)]
    pub p: Option<usize>,
    /// Total instances.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub corruption: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub corruption_scale: Option<f64>,
    /// Seed for generate and synthetic fits.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "DSPL hyper-parameters")]
pub struct ParamArgs {
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub tau_lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// ADMM penalty, a number or `auto`.
    #[arg(long)]
    pub rho: Option<Rho>,
    #[arg(long)]
    pub eps_l: Option<f64>,
    #[arg(long)]
    pub eps_r: Option<f64>,
    #[arg(long)]
    pub eps_s: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_inner: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adaptive_rho: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub interleave_v: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub literal_lambda_step: Option<bool>,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "SPL baseline")]
pub struct SplArgs {
    #[arg(long)]
    pub spl_lambda0: Option<f64>,
    #[arg(long)]
    pub spl_tau_lambda: Option<f64>,
    #[arg(long)]
    pub spl_mu: Option<f64>,
    #[arg(long)]
    pub spl_eps_l: Option<f64>,
    #[arg(long)]
    pub spl_max_outer: Option<usize>,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Dataset")]
pub struct DataArgs {
    /// CSV dataset; without it a synthetic problem is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, conflicts_with = "batch_size")]
    pub batch_column: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Columns to skip, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ignore: Option<Vec<String>>,
}

impl Common {
    fn layer(&self) -> ExperimentFile {
        let s = &self.synth;
        let synth = SynthOverrides {
            p: s.p,
            n: s.n,
            batches: s.batches,
            corruption: s.corruption,
            noise_sigma: s.noise_sigma,
            corruption_scale: s.corruption_scale,
            seed: s.seed,
        };
        let a = &self.params;
        let params = ParamOverrides {
            lambda0: a.lambda0,
            tau_lambda: a.tau_lambda,
            mu: a.mu,
            rho: a.rho,
            eps_l: a.eps_l,
            eps_r: a.eps_r,
            eps_s: a.eps_s,
            max_outer: a.max_outer,
            max_inner: a.max_inner,
            adaptive_rho: a.adaptive_rho,
            interleave_v: a.interleave_v,
            literal_lambda_step: a.literal_lambda_step,
        };
        let spl = ParamOverrides {
            lambda0: self.spl.spl_lambda0,
            tau_lambda: self.spl.spl_tau_lambda,
            mu: self.spl.spl_mu,
            eps_l: self.spl.spl_eps_l,
            max_outer: self.spl.spl_max_outer,
            ..Default::default()
        };
        ExperimentFile {
            solvers: self.solvers.clone(),
            seeds: self.seeds.clone(),
            output: self.output.clone(),
            workers: self.workers,
            paper_scale: self.paper_scale,
            ols_ridge: self.ols_ridge,
            synthetic: (synth != SynthOverrides::default()).then_some(synth),
            params,
            spl,
            ..Default::default()
        }
    }

    /// defaults < config file < flags
    fn resolve(&self, mode: Mode, extra: ExperimentFile) -> anyhow::Result<ExperimentConfig> {
        let mut file = match &self.config {
            Some(path) => ExperimentFile::read(path)?,
            None => ExperimentFile::default(),
        };
        let mut flags = self.layer();
        flags.layer(extra);
        // a dataset on the command line replaces a synthetic table from the file and vice versa
        if flags.dataset.is_some() {
            file.synthetic = None;
        }
        if flags.synthetic.is_some() && flags.dataset.is_none() {
            file.dataset = None;
        }
        file.layer(flags);
        file.resolve(mode)
    }
}

/// Runs a parsed command. `Ok(false)` means some runs failed but partial
/// results were written.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Generate { common } => {
            let config = common.resolve(Mode::Generate, ExperimentFile::default())?;
            generate(&config)?;
            Ok(true)
        }
        Command::Fit {
            common,
            data,
            solver,
            truth,
            test,
            trace,
        } => {
            let extra = ExperimentFile {
                solvers: solver.map(|s| vec![s]),
                dataset: data.data.map(|path| DatasetSpec {
                    path,
                    response: data.response,
                    batch_column: data.batch_column,
                    batch_size: data.batch_size,
                    ignore: data.ignore,
                }),
                ..Default::default()
            };
            let config = common.resolve(Mode::Fit, extra)?;
            fit(&config, truth.as_deref(), test.as_deref(), trace.as_deref())?;
            Ok(true)
        }
        Command::SweepCorruption { common, ratios } => {
            let extra = ExperimentFile {
                ratios,
                ..Default::default()
            };
            let config = common.resolve(Mode::SweepCorruption, extra)?;
            finish_sweep(&config, sweep::run_sweep_corruption(&config)?)
        }
        Command::SweepBatches {
            common,
            corrupted_batches,
        } => {
            let extra = ExperimentFile {
                corrupted_batches,
                ..Default::default()
            };
            let config = common.resolve(Mode::SweepBatches, extra)?;
            finish_sweep(&config, sweep::run_sweep_batches(&config)?)
        }
        Command::SweepLambda {
            common,
            taus,
            lambda_ratio,
        } => {
            let extra = ExperimentFile {
                taus,
                lambda_ratio,
                ..Default::default()
            };
            let config = common.resolve(Mode::SweepLambda, extra)?;
            finish_sweep(&config, sweep::run_sweep_lambda(&config)?)
        }
    }
}

fn generate(config: &ExperimentConfig) -> anyhow::Result<()> {
    let spec = config
        .synthetic()
        .context("generate needs a synthetic problem")?;
    let Some(out) = &config.output else {
        bail!("generate needs --output");
    };
    let synth = spec.config(Corruption::Uniform(spec.corruption), spec.seed);
    let data = datagen::generate::<f64>(&synth)?;
    csvio::write_dataset_csv(out, &data)?;
    let truth_path = csvio::truth_path(out);
    csvio::write_truth(
        &truth_path,
        &Truth {
            w_star: data.w_star.clone(),
            config: synth,
        },
    )?;
    eprintln!(
        "wrote {} ({} rows, {} corrupted) and {}",
        out.display(),
        data.clean_count() + data.corrupted_count(),
        data.corrupted_count(),
        truth_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitSummary {
    solver: SolverKind,
    w: Vec<f64>,
    converged: Option<bool>,
    iterations: usize,
    wall_time: f64,
    objective: Option<f64>,
    active: Option<usize>,
    recovery_error: Option<f64>,
    train_mae: f64,
    test_mae: Option<f64>,
    weight_confusion: Option<metrics::WeightConfusion>,
}

fn mae(batches: &[BatchF64], w: &[f64]) -> anyhow::Result<f64> {
    let mut pred = Vec::new();
    let mut y = Vec::new();
    for b in batches {
        for (x, yi) in b.instances() {
            pred.push(LinearSquared.predict(w, x));
            y.push(yi);
        }
    }
    Ok(metrics::mean_absolute_error(&pred, &y)?)
}

fn fit(
    config: &ExperimentConfig,
    truth: Option<&Path>,
    test: Option<&Path>,
    trace: Option<&Path>,
) -> anyhow::Result<()> {
    let solver = match config.solvers.as_slice() {
        [s] => *s,
        _ => bail!("fit runs exactly one solver"),
    };
    let (batches, w_star, mask, options) = match &config.source {
        DataSource::Dataset(d) => {
            let options = d.load_options()?;
            let batches = load_csv_dataset(&d.path, &options)?;
            let sidecar = csvio::truth_path(&d.path);
            let truth = match truth {
                Some(p) => Some(csvio::read_truth(p)?),
                None if sidecar.exists() => Some(csvio::read_truth(&sidecar)?),
                None => None,
            };
            (batches, truth.map(|t| t.w_star), None, Some(options))
        }
        DataSource::Synthetic(s) => {
            let data =
                datagen::generate::<f64>(&s.config(Corruption::Uniform(s.corruption), s.seed))?;
            (
                data.batches,
                Some(data.w_star),
                Some(data.corruption_mask),
                None,
            )
        }
    };

    let out = with_workers(config.workers, || {
        sweep::run_solver(solver, &batches, config)
    })??;
    let test_mae = match (test, &options) {
        (Some(path), Some(opts)) => Some(mae(&load_csv_dataset(path, opts)?, &out.w)?),
        (Some(path), None) => Some(mae(&load_csv_dataset(path, &Default::default())?, &out.w)?),
        (None, _) => None,
    };
    let summary = FitSummary {
        solver,
        converged: out.report.as_ref().map(|r| r.converged),
        iterations: out.iterations,
        wall_time: out.wall_time.as_secs_f64(),
        objective: out.objective,
        active: out
            .v
            .as_ref()
            .map(|v| v.iter().flatten().filter(|x| **x != 0.0).count()),
        recovery_error: w_star
            .as_ref()
            .map(|ws| metrics::l2_recovery_error(&out.w, ws))
            .transpose()?,
        train_mae: mae(&batches, &out.w)?,
        test_mae,
        weight_confusion: match (&out.v, &mask) {
            (Some(v), Some(m)) => Some(metrics::weight_confusion(v, m)?),
            _ => None,
        },
        w: out.w.clone(),
    };
    if let (Some(path), Some(report)) = (trace, &out.report) {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, report)?;
        writeln!(f)?;
    } else if trace.is_some() {
        eprintln!("note: {solver} produces no run report; --trace ignored");
    }
    let json = serde_json::to_string_pretty(&summary)?;
    match &config.output {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => writeln!(std::io::stdout().lock(), "{json}")?,
    }
    Ok(())
}

fn finish_sweep(config: &ExperimentConfig, table: SweepTable) -> anyhow::Result<bool> {
    match &config.output {
        Some(path) => table.save(path)?,
        None => table.write_csv(std::io::stdout().lock())?,
    }
    eprint!("mean recovery error\n{}", table.summary());
    let failed = table.rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", table.rows.len());
    }
    Ok(failed == 0)
}
