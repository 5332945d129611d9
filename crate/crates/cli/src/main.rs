mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use meshcva::estimators::PortfolioConfig;
use meshcva::models::ModelConfig;
use meshcva::paths::FamilyTag;
use meshcva::study::{
    run_convergence_study, run_replication_study, write_convergence_csv, write_report_csv, Estimators,
    ReplicationStudy,
};
use meshcva::{
    estimate_c1, estimate_c2, nested_mc_oracle, CvaProblem, EpsilonSchedule, EstimateResult, Execution,
    GridRule, HazardLoss, ModelSpec, PathFamily, Partition, Variant,
};

use config::{CommonArgs, EstimatorKind, Settings};

#[derive(Debug, Parser)]
#[command(name = "meshcva", version, about = "Stochastic-mesh CVA estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One estimate of ĉ1, ĉ2 or the nested oracle.
    Estimate(CommonArgs),
    /// Replicated ĉ1/ĉ2 statistics over mesh sizes, as CSV.
    Replicate(CommonArgs),
    /// Discretization error of the Brownian example over grid sizes, as CSV.
    Converge(CommonArgs),
    /// Nested Monte Carlo oracle (outer = L, inner = L0).
    Oracle(CommonArgs),
    /// Simulate a path family and write it as CSV.
    DumpPaths(CommonArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => estimate(&Settings::resolve(&a)?),
        Command::Replicate(a) => replicate(&Settings::resolve(&a)?),
        Command::Converge(a) => converge(&Settings::resolve(&a)?),
        Command::Oracle(a) => {
            let mut s = Settings::resolve(&a)?;
            s.estimator = Some(EstimatorKind::Oracle);
            estimate(&s)
        }
        Command::DumpPaths(a) => dump_paths(&Settings::resolve(&a)?),
    }
}

fn exec(s: &Settings) -> Execution {
    if s.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn single<T: Copy>(v: &[T], what: &str) -> Result<T> {
    match v {
        [x] => Ok(*x),
        _ => bail!("{what} takes exactly one value here, got {}", v.len()),
    }
}

fn load_model(spec: &str) -> Result<ModelSpec> {
    if spec == "brownian" {
        return Ok(ModelSpec::brownian_1d());
    }
    let cfg = ModelConfig::load(spec)?;
    Ok(ModelSpec::from_config(&cfg)?)
}

fn problem(s: &Settings, n: usize) -> Result<CvaProblem> {
    let model = Arc::new(load_model(&s.model).context("loading model")?);
    let (portfolio, hazard) = if s.portfolio == "brownian-example" {
        let base = CvaProblem::brownian_example(n)?;
        (base.portfolio, base.hazard)
    } else {
        (PortfolioConfig::load(&s.portfolio).context("loading portfolio")?.build(), HazardLoss::unit())
    };
    let hazard = match s.hazard {
        Some(h) => HazardLoss::constant_hazard(h.loss, h.intensity),
        None => hazard,
    };
    let partition = Partition::build(&portfolio.maturities, GridRule::Steps(n))?;
    Ok(CvaProblem::new(model, portfolio, hazard, partition)?)
}

fn schedule(s: &Settings, p: &CvaProblem) -> Result<EpsilonSchedule> {
    let n_tilde = (1..=p.model.num_contract_factors())
        .map(|m| p.model.projected_dim(m))
        .collect::<meshcva::Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    Ok(EpsilonSchedule::new(Variant::C1, s.delta, s.c0, s.ell0, n_tilde)?)
}

fn output(path: &Option<std::path::PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn estimate(s: &Settings) -> Result<()> {
    let n = s.steps()?;
    let l = single(&s.mesh_sizes, "--L")?;
    let p = problem(s, n)?;
    let sch = schedule(s, &p)?;
    let kind = s.estimator.unwrap_or(EstimatorKind::C1);
    let r: EstimateResult = match kind {
        EstimatorKind::C1 => estimate_c1(&p, l, &sch, s.seed, exec(s))?,
        EstimatorKind::C2 => estimate_c2(&p, l, s.eval_size, &sch, s.seed, exec(s))?,
        EstimatorKind::Oracle => nested_mc_oracle(&p, l, s.eval_size, s.seed, exec(s))?,
        EstimatorKind::Both => bail!("estimate runs one estimator; use replicate for both"),
    };
    let mut out = output(&s.out)?;
    writeln!(out, "estimator,L,L0,n,epsilon,seed,value,std_error")?;
    let fmt_opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.10}"));
    let l0 = r.config.eval_size.map_or("NA".to_string(), |v| v.to_string());
    writeln!(
        out,
        "{},{},{},{},{},{},{:.10},{}",
        format!("{kind:?}").to_lowercase(),
        r.config.mesh_size,
        l0,
        r.config.steps,
        fmt_opt(r.config.epsilon),
        s.seed,
        r.value,
        fmt_opt(if r.stats.count > 1 { r.stats.std_error() } else { None }),
    )?;
    out.flush()?;
    Ok(())
}

fn replicate(s: &Settings) -> Result<()> {
    let n = s.steps()?;
    let p = problem(s, n)?;
    let estimators = match s.estimator.unwrap_or(EstimatorKind::Both) {
        EstimatorKind::C1 => Estimators::C1,
        EstimatorKind::C2 => Estimators::C2,
        EstimatorKind::Both => Estimators::Both,
        EstimatorKind::Oracle => bail!("replicate supports c1, c2 or both"),
    };
    let mut sizes = s.mesh_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let study = ReplicationStudy {
        estimators,
        mesh_sizes: sizes,
        eval_size: s.eval_size,
        replications: s.reps,
        schedule: schedule(s, &p)?,
        base_seed: s.seed,
    };
    let report = run_replication_study(&p, &study, exec(s))?;
    info!("replication study finished in {:.1?}", report.wall_time);
    let mut out = output(&s.out)?;
    write_report_csv(&report.rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn converge(s: &Settings) -> Result<()> {
    let steps = s.n.clone().unwrap_or_else(|| vec![10, 100, 1000, 10_000]);
    let report = run_convergence_study(&steps)?;
    info!("log-log slope of |c - c_Δ| against |Δ|: {:.4}", report.slope);
    let mut out = output(&s.out)?;
    write_convergence_csv(&report, &mut out)?;
    out.flush()?;
    Ok(())
}

fn dump_paths(s: &Settings) -> Result<()> {
    let n = s.steps()?;
    let l = single(&s.mesh_sizes, "--L")?;
    let p = problem(s, n)?;
    let fam = PathFamily::simulate(&p.model, &p.partition, l, s.seed, FamilyTag::Mesh, exec(s))?;
    let mut out = output(&s.out)?;
    fam.write_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = &s.out {
        info!("wrote {l} paths to {}", Path::new(path).display());
    }
    Ok(())
}
