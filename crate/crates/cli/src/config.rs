use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    C1,
    C2,
    Both,
    Oracle,
}

/// Optional `g(t) = loss·λ·e^{-λt}` in place of `g ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardConfig {
    pub loss: f64,
    pub intensity: f64,
}

/// Run settings read from `--config`; every key is optional and command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub portfolio: Option<String>,
    pub estimator: Option<EstimatorKind>,
    pub n: Option<Vec<usize>>,
    #[serde(rename = "L")]
    pub mesh_sizes: Option<Vec<usize>>,
    #[serde(rename = "L0")]
    pub eval_size: Option<usize>,
    pub reps: Option<usize>,
    pub delta: Option<f64>,
    pub c0: Option<f64>,
    pub ell0: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sequential: Option<bool>,
    pub hazard: Option<HazardConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model: `brownian` or a model TOML file.
    #[arg(long)]
    pub model: Option<String>,
    /// Portfolio: `brownian-example` or a portfolio TOML file.
    #[arg(long)]
    pub portfolio: Option<String>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Number of grid steps (repeatable for `converge`).
    #[arg(long)]
    pub n: Vec<usize>,
    /// Mesh size (repeatable for `replicate`).
    #[arg(long = "L")]
    pub mesh_sizes: Vec<usize>,
    /// Evaluation family size for ĉ2, inner sample size for the oracle.
    #[arg(long = "L0")]
    pub eval_size: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub ell0: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long)]
    pub sequential: bool,
}

/// Flags merged over the configuration file, with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: String,
    pub portfolio: String,
    pub estimator: Option<EstimatorKind>,
    /// Grid sizes; `None` when neither flags nor the file set them.
    pub n: Option<Vec<usize>>,
    pub mesh_sizes: Vec<usize>,
    pub eval_size: usize,
    pub reps: usize,
    pub delta: f64,
    pub c0: f64,
    pub ell0: u32,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub sequential: bool,
    pub hazard: Option<HazardConfig>,
}

fn non_empty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let s = Settings {
            model: args.model.clone().or(cfg.model).unwrap_or_else(|| "brownian".into()),
            portfolio: args.portfolio.clone().or(cfg.portfolio).unwrap_or_else(|| "brownian-example".into()),
            estimator: args.estimator.or(cfg.estimator),
            n: non_empty(args.n.clone()).or(cfg.n),
            mesh_sizes: non_empty(args.mesh_sizes.clone()).or(cfg.mesh_sizes).unwrap_or_else(|| vec![100]),
            eval_size: args.eval_size.or(cfg.eval_size).unwrap_or(10_000),
            reps: args.reps.or(cfg.reps).unwrap_or(100),
            delta: args.delta.or(cfg.delta).unwrap_or(meshcva::estimators::DEFAULT_DELTA),
            c0: args.c0.or(cfg.c0).unwrap_or(meshcva::estimators::DEFAULT_C0),
            ell0: args.ell0.or(cfg.ell0).unwrap_or(1),
            seed: args.seed.or(cfg.seed).unwrap_or(2024),
            out: args.out.clone().or(cfg.out),
            sequential: args.sequential || cfg.sequential.unwrap_or(false),
            hazard: cfg.hazard,
        };
        if s.n.as_ref().is_some_and(|n| n.contains(&0)) {
            bail!("--n must be positive");
        }
        Ok(s)
    }

    /// The single grid size of a run, 100 by default.
    pub fn steps(&self) -> Result<usize> {
        match self.n.as_deref() {
            None => Ok(100),
            Some([n]) => Ok(*n),
            Some(v) => bail!("--n takes exactly one value here, got {}", v.len()),
        }
    }
}
