//! Experiment configuration.
//!
//! Settings come from three layers, later ones winning field by field:
//! built-in defaults, a TOML file (`--config`) and command-line flags. The
//! file schema mirrors [`ExperimentFile`]:
//!
//! ```toml
//! mode = "sweep-corruption"     # optional; must match the subcommand
//! solvers = ["dspl", "spl", "ols"]
//! seeds = [0, 1, 2]
//! output = "results.csv"
//! workers = 8
//! ratios = [0.7, 0.8, 0.9]      # sweep-corruption
//! corrupted_batches = [4, 9]    # sweep-batches
//! taus = [0.1, 0.3, 1.0]        # sweep-lambda
//! lambda_ratio = 0.9            # sweep-lambda corruption ratio
//! ols_ridge = 0.0
//!
//! [synthetic]
//! p = 20
//! n = 2000
//! batches = 10
//! corruption = 0.3
//! noise_sigma = 0.1
//! corruption_scale = 5.0
//! seed = 0
//!
//! # [dataset]                   # instead of [synthetic]
//! # path = "data.csv"
//! # response = "y"
//! # batch_column = "batch"      # or batch_size = 200
//! # ignore = ["corrupted"]
//!
//! [params]                      # DSPL
//! lambda0 = 0.1
//! tau_lambda = 1.0
//! mu = 1.1
//! rho = "auto"                  # or a number
//! eps_l = 1e-6
//! eps_r = 2e-5
//! eps_s = 2e-5
//! max_outer = 200
//! max_inner = 10000
//! adaptive_rho = false
//! interleave_v = false
//! literal_lambda_step = false
//!
//! [spl]                         # SPL baseline, same keys
//! lambda0 = 1.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use dspl::datagen::{Corruption, SynthConfig};
use dspl::{curvature_rho, BatchF64, HyperParamsF64};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::csvio::{Batching, LoadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Generate,
    Fit,
    SweepCorruption,
    SweepBatches,
    SweepLambda,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Generate => "generate",
            Mode::Fit => "fit",
            Mode::SweepCorruption => "sweep-corruption",
            Mode::SweepBatches => "sweep-batches",
            Mode::SweepLambda => "sweep-lambda",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Dspl,
    Spl,
    Ols,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Dspl => "dspl",
            SolverKind::Spl => "spl",
            SolverKind::Ols => "ols",
        })
    }
}

/// ADMM penalty: a fixed value or [`curvature_rho`] of the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    Fixed(f64),
    Auto,
}

impl FromStr for Rho {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Rho::Auto);
        }
        s.parse()
            .map(Rho::Fixed)
            .map_err(|_| format!("expected a number or `auto`, got `{s}`"))
    }
}

impl Serialize for Rho {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Rho::Fixed(v) => s.serialize_f64(*v),
            Rho::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Rho {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rho::Fixed(v)),
            Raw::Int(v) => Ok(Rho::Fixed(v as f64)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Hyper-parameter overrides; unset fields keep the solver's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub lambda0: Option<f64>,
    pub tau_lambda: Option<f64>,
    pub mu: Option<f64>,
    pub rho: Option<Rho>,
    pub eps_l: Option<f64>,
    pub eps_r: Option<f64>,
    pub eps_s: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub adaptive_rho: Option<bool>,
    pub interleave_v: Option<bool>,
    pub literal_lambda_step: Option<bool>,
}

macro_rules! layer {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ParamOverrides {
    /// Fields set in `top` replace those in `self`.
    pub fn layer(&mut self, top: &ParamOverrides) {
        layer!(self, top; lambda0, tau_lambda, mu, rho, eps_l, eps_r, eps_s, max_outer,
            max_inner, adaptive_rho, interleave_v, literal_lambda_step);
    }

    /// Applies the overrides to `base`; `rho = auto` is computed from `batches`.
    pub fn apply(&self, mut base: HyperParamsF64, batches: &[BatchF64]) -> HyperParamsF64 {
        let o = self;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { base.$f = v; } )* };
        }
        set!(
            lambda0,
            tau_lambda,
            mu,
            eps_l,
            eps_r,
            eps_s,
            max_outer,
            max_inner,
            adaptive_rho,
            interleave_v,
            literal_lambda_step
        );
        match o.rho {
            Some(Rho::Fixed(r)) => base.rho = r,
            Some(Rho::Auto) => base.rho = curvature_rho(batches),
            None => {}
        }
        base
    }
}

/// Synthetic problem settings, all optional so layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOverrides {
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub batches: Option<usize>,
    pub corruption: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub corruption_scale: Option<f64>,
    /// Seed for `generate` and single synthetic fits; sweeps use `seeds`.
    pub seed: Option<u64>,
}

impl SynthOverrides {
    pub fn layer(&mut self, top: &SynthOverrides) {
        layer!(self, top; p, n, batches, corruption, noise_sigma, corruption_scale, seed);
    }
}

/// Resolved synthetic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub p: usize,
    pub n: usize,
    pub batches: usize,
    pub corruption: f64,
    pub noise_sigma: f64,
    pub corruption_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// p = 20, n = 2000 in 10 batches.
    pub fn desk() -> Self {
        Self {
            p: 20,
            n: 2000,
            batches: 10,
            corruption: 0.0,
            noise_sigma: 0.1,
            corruption_scale: 5.0,
            seed: 0,
        }
    }

    /// p = 100, n = 10 000 in 10 batches.
    pub fn paper() -> Self {
        Self {
            p: 100,
            n: 10_000,
            ..Self::desk()
        }
    }

    fn with(mut self, o: &SynthOverrides) -> Self {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        set!(
            p,
            n,
            batches,
            corruption,
            noise_sigma,
            corruption_scale,
            seed
        );
        self
    }

    /// Generator settings for a given corruption layout and seed.
    pub fn config(&self, corruption: Corruption, seed: u64) -> SynthConfig {
        let mut c = SynthConfig::balanced(self.p, self.n, self.batches, 0.0, seed);
        c.corruption = corruption;
        c.noise_sigma = self.noise_sigma;
        c.corruption_scale = self.corruption_scale;
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub response: Option<String>,
    pub batch_column: Option<String>,
    pub batch_size: Option<usize>,
    pub ignore: Option<Vec<String>>,
}

impl DatasetSpec {
    pub fn load_options(&self) -> anyhow::Result<LoadOptions> {
        let defaults = LoadOptions::default();
        let batching = match (&self.batch_column, self.batch_size) {
            (Some(_), Some(_)) => bail!("set either batch_column or batch_size, not both"),
            (Some(c), None) => Batching::Column(c.clone()),
            (None, Some(s)) => Batching::Size(s),
            (None, None) => defaults.batching,
        };
        Ok(LoadOptions {
            response: self.response.clone().unwrap_or(defaults.response),
            batching,
            ignore: self.ignore.clone().unwrap_or(defaults.ignore),
        })
    }
}

/// One configuration layer, as read from TOML or assembled from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub mode: Option<Mode>,
    pub solvers: Option<Vec<SolverKind>>,
    pub seeds: Option<Vec<u64>>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub paper_scale: Option<bool>,
    pub ratios: Option<Vec<f64>>,
    pub corrupted_batches: Option<Vec<usize>>,
    pub taus: Option<Vec<f64>>,
    pub lambda_ratio: Option<f64>,
    pub ols_ridge: Option<f64>,
    pub synthetic: Option<SynthOverrides>,
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub spl: ParamOverrides,
}

impl ExperimentFile {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `top` replace those in `self`; tables merge key by key.
    pub fn layer(&mut self, top: ExperimentFile) {
        layer!(self, top; mode, solvers, seeds, output, workers, paper_scale, ratios,
            corrupted_batches, taus, lambda_ratio, ols_ridge, dataset);
        match (&mut self.synthetic, top.synthetic) {
            (Some(s), Some(t)) => s.layer(&t),
            (s @ None, t) => *s = t,
            (Some(_), None) => {}
        }
        self.params.layer(&top.params);
        self.spl.layer(&top.spl);
    }

    /// Fills defaults and checks the result for `mode`.
    pub fn resolve(self, mode: Mode) -> anyhow::Result<ExperimentConfig> {
        if let Some(m) = self.mode {
            if m != mode {
                bail!("config file is for `{m}`, but `{mode}` was requested");
            }
        }
        let base = if self.paper_scale.unwrap_or(false) {
            SynthSpec::paper()
        } else {
            SynthSpec::desk()
        };
        let source = match (self.synthetic, self.dataset) {
            (Some(_), Some(_)) => bail!("give either a synthetic problem or a dataset, not both"),
            (_, Some(d)) => DataSource::Dataset(d),
            (s, None) => DataSource::Synthetic(base.with(&s.unwrap_or_default())),
        };
        if matches!(source, DataSource::Dataset(_))
            && matches!(
                mode,
                Mode::Generate | Mode::SweepCorruption | Mode::SweepBatches | Mode::SweepLambda
            )
        {
            bail!("`{mode}` needs a synthetic problem, not a dataset");
        }

        let default_solvers = match mode {
            Mode::SweepLambda | Mode::Fit => vec![SolverKind::Dspl],
            _ => vec![SolverKind::Dspl, SolverKind::Spl, SolverKind::Ols],
        };
        let config = ExperimentConfig {
            mode,
            solvers: self.solvers.unwrap_or(default_solvers),
            source,
            params: self.params,
            spl: self.spl,
            ols_ridge: self.ols_ridge.unwrap_or(0.0),
            seeds: self.seeds.unwrap_or_else(|| (0..10).collect()),
            output: self.output,
            workers: self.workers.unwrap_or_else(default_workers),
            ratios: self
                .ratios
                .unwrap_or_else(|| (1..=9).map(|i| i as f64 / 10.0).collect()),
            corrupted_batches: self.corrupted_batches.unwrap_or_else(|| (4..=9).collect()),
            taus: self.taus.unwrap_or_else(default_taus),
            lambda_ratio: self.lambda_ratio.unwrap_or(0.9),
        };
        config.validate()?;
        Ok(config)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// 13 points, log-spaced over [0.1, 100].
pub fn default_taus() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-1.0 + i as f64 / 4.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Dataset(DatasetSpec),
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub solvers: Vec<SolverKind>,
    pub source: DataSource,
    /// DSPL overrides on top of the standard defaults.
    pub params: ParamOverrides,
    /// SPL overrides on top of the baseline defaults.
    pub spl: ParamOverrides,
    pub ols_ridge: f64,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub workers: usize,
    pub ratios: Vec<f64>,
    pub corrupted_batches: Vec<usize>,
    pub taus: Vec<f64>,
    pub lambda_ratio: f64,
}

impl ExperimentConfig {
    pub fn defaults(mode: Mode) -> Self {
        ExperimentFile::default()
            .resolve(mode)
            .expect("defaults are valid")
    }

    pub fn synthetic(&self) -> Option<&SynthSpec> {
        match &self.source {
            DataSource::Synthetic(s) => Some(s),
            DataSource::Dataset(_) => None,
        }
    }

    pub fn dspl_params(&self, batches: &[BatchF64], p: usize) -> HyperParamsF64 {
        self.params.apply(HyperParamsF64::for_features(p), batches)
    }

    pub fn spl_params(&self, batches: &[BatchF64], p: usize) -> HyperParamsF64 {
        self.spl.apply(HyperParamsF64::spl_baseline(p), batches)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.solvers.is_empty() {
            bail!("no solvers selected");
        }
        if self.seeds.is_empty() {
            bail!("no seeds given");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if !(self.ols_ridge >= 0.0) {
            bail!("ols_ridge must be non-negative");
        }
        let unit = |r: f64| (0.0..=1.0).contains(&r);
        if !self.ratios.iter().copied().all(unit) || !unit(self.lambda_ratio) {
            bail!("corruption ratios must lie in [0, 1]");
        }
        if !self.taus.iter().all(|t| t.is_finite() && *t > 0.0) {
            bail!("tau values must be positive");
        }
        if let DataSource::Synthetic(s) = &self.source {
            if s.batches == 0 || s.n < s.batches {
                bail!("need at least one instance per batch");
            }
            if !unit(s.corruption) {
                bail!("corruption ratio must lie in [0, 1]");
            }
            if self.mode == Mode::SweepBatches {
                if let Some(k) = self.corrupted_batches.iter().find(|k| **k > s.batches) {
                    bail!(
                        "{k} corrupted batches requested but only {} exist",
                        s.batches
                    );
                }
            }
        }
        if let DataSource::Dataset(d) = &self.source {
            d.load_options()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::defaults(Mode::SweepCorruption);
        assert_eq!(c.seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(c.ratios.len(), 9);
        assert_eq!(c.synthetic().unwrap(), &SynthSpec::desk());
        let p = c.dspl_params(&[], 20);
        assert_eq!((p.lambda0, p.tau_lambda, p.mu, p.rho), (0.1, 1.0, 1.1, 1.0));
        let taus = default_taus();
        assert!((taus[0] - 0.1).abs() < 1e-15 && (taus[12] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn parses_documented_schema() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let file: ExperimentFile = toml::from_str(&text).unwrap();
        assert_eq!(file.params.rho, Some(Rho::Auto));
        assert_eq!(file.spl.lambda0, Some(1.0));
        let c = file.resolve(Mode::SweepCorruption).unwrap();
        assert_eq!(c.solvers.len(), 3);
        assert_eq!(c.synthetic().unwrap().corruption, 0.3);
    }

    #[test]
    fn later_layers_win() {
        let mut file: ExperimentFile =
            toml::from_str("seeds = [1]\n[params]\nmu = 1.5\nrho = 2\n[synthetic]\np = 7\n")
                .unwrap();
        let mut flags = ExperimentFile::default();
        flags.params.rho = Some(Rho::Fixed(3.0));
        flags.synthetic = Some(SynthOverrides {
            n: Some(70),
            ..Default::default()
        });
        file.layer(flags);
        let c = file.resolve(Mode::Fit).unwrap();
        assert_eq!(c.seeds, vec![1]);
        assert_eq!(c.params.mu, Some(1.5));
        assert_eq!(c.params.rho, Some(Rho::Fixed(3.0)));
        let s = c.synthetic().unwrap();
        assert_eq!((s.p, s.n), (7, 70));
    }

    #[test]
    fn exactly_one_data_source() {
        let both: ExperimentFile =
            toml::from_str("[synthetic]\np = 3\n[dataset]\npath = \"d.csv\"\n").unwrap();
        assert!(both.resolve(Mode::Fit).is_err());
        let data: ExperimentFile = toml::from_str("[dataset]\npath = \"d.csv\"\n").unwrap();
        assert!(data.clone().resolve(Mode::Fit).is_ok());
        assert!(data.resolve(Mode::SweepLambda).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(toml::from_str::<ExperimentFile>("bogus = 1").is_err());
        assert!(toml::from_str::<ExperimentFile>("[params]\nrho = \"fast\"").is_err());
        let wrong_mode: ExperimentFile = toml::from_str("mode = \"fit\"").unwrap();
        assert!(wrong_mode.resolve(Mode::Generate).is_err());
        let too_many: ExperimentFile = toml::from_str("corrupted_batches = [11]").unwrap();
        assert!(too_many.resolve(Mode::SweepBatches).is_err());
        assert_eq!("auto".parse::<Rho>(), Ok(Rho::Auto));
        assert_eq!("0.5".parse::<Rho>(), Ok(Rho::Fixed(0.5)));
    }

    #[test]
    fn paper_scale_switches_base_problem() {
        let file: ExperimentFile =
            toml::from_str("paper_scale = true\n[synthetic]\nn = 50000").unwrap();
        let c = file.resolve(Mode::SweepCorruption).unwrap();
        let s = c.synthetic().unwrap();
        assert_eq!((s.p, s.n), (100, 50_000));
    }
}
