//! Replication studies, discretization-convergence tables and CSV reports.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use crate::error::{param, MeshError, Result};
use crate::estimators::{
    build_mesh, c1_from_mesh, c2_from_mesh, reference_c_brownian, reference_c_delta_brownian,
    CvaProblem, EpsilonSchedule, ReplicationStats, Variant,
};
use crate::exec::Execution;
use crate::paths::{derive_seed, FamilyTag, PathFamily};

/// Which estimators a study runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimators {
    C1,
    C2,
    Both,
}

impl Estimators {
    fn c1(self) -> bool {
        matches!(self, Estimators::C1 | Estimators::Both)
    }
    fn c2(self) -> bool {
        matches!(self, Estimators::C2 | Estimators::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationStudy {
    pub estimators: Estimators,
    /// Mesh sizes `L`, ascending.
    pub mesh_sizes: Vec<usize>,
    /// Evaluation family size `L0` for `ĉ₂`.
    pub eval_size: usize,
    pub replications: usize,
    /// Shared `δ`, `C₀`, `ℓ₀`; the variant is chosen per estimator.
    pub schedule: EpsilonSchedule,
    pub base_seed: u64,
}

impl ReplicationStudy {
    pub fn validate(&self) -> Result<()> {
        if self.mesh_sizes.is_empty() {
            return Err(param("L", "at least one mesh size is required"));
        }
        if self.mesh_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param("L", "mesh sizes must be strictly ascending"));
        }
        if self.mesh_sizes[0] < 2 {
            return Err(param("L", "mesh sizes must be at least 2"));
        }
        if self.replications < 1 {
            return Err(param("reps", "at least one replication is required"));
        }
        if self.estimators.c2() && self.eval_size < 1 {
            return Err(param("L0", "at least one evaluation path is required"));
        }
        Ok(())
    }

    /// Seed of replication `r`; independent of the mesh size so a larger
    /// mesh extends the smaller one path by path.
    pub fn replication_seed(&self, r: usize) -> u64 {
        derive_seed(self.base_seed, r as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mesh_size: usize,
    pub c1: Option<ReplicationStats>,
    pub c2: Option<ReplicationStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub rows: Vec<ReportRow>,
    /// Raw replications: `samples_c1[row][r]`.
    pub samples_c1: Vec<Vec<f64>>,
    pub samples_c2: Vec<Vec<f64>>,
    pub wall_time: Duration,
}

/// Runs `R` independently seeded replications for every mesh size.
///
/// Replication `r` draws its mesh family from seed `derive_seed(base, r)`
/// and, for `ĉ₂`, one evaluation family shared by every mesh size, so rows
/// use common random numbers. Results are ordered by `(L, r)` regardless of
/// scheduling.
pub fn run_replication_study(
    problem: &CvaProblem,
    study: &ReplicationStudy,
    exec: Execution,
) -> Result<ReplicationReport> {
    study.validate()?;
    let start = Instant::now();
    let eps0 = problem.partition.eps0();
    let s1 = study.schedule.for_variant(Variant::C1);
    let s2 = study.schedule.for_variant(Variant::C2);
    let n_rows = study.mesh_sizes.len();

    let per_rep: Vec<Result<Vec<(Option<f64>, Option<f64>)>>> =
        exec.map_range(study.replications, |r| {
            let seed = study.replication_seed(r);
            let eval = if study.estimators.c2() {
                Some(PathFamily::simulate(
                    &problem.model,
                    &problem.partition,
                    study.eval_size,
                    seed,
                    FamilyTag::Evaluation,
                    exec,
                )?)
            } else {
                None
            };
            let mut out = Vec::with_capacity(n_rows);
            for &l in &study.mesh_sizes {
                let eps1 = s1.epsilon_for(l, eps0);
                let ctx = build_mesh(problem, l, eps1, seed, exec)?;
                let c1 = if study.estimators.c1() {
                    Some(c1_from_mesh(&ctx, problem, exec)?)
                } else {
                    None
                };
                let c2 = match &eval {
                    Some(eval) => {
                        let ctx2 = ctx.with_epsilon(s2.epsilon_for(l, eps0))?;
                        Some(c2_from_mesh(&ctx2, eval, problem, exec)?)
                    }
                    None => None,
                };
                log::debug!("replication {r}, L = {l}: c1 = {c1:?}, c2 = {c2:?}");
                out.push((c1, c2));
            }
            Ok(out)
        });

    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let mut samples_c1 = vec![Vec::new(); n_rows];
    let mut samples_c2 = vec![Vec::new(); n_rows];
    for rep in &per_rep {
        for (row, (c1, c2)) in rep.iter().enumerate() {
            if let Some(v) = c1 {
                samples_c1[row].push(*v);
            }
            if let Some(v) = c2 {
                samples_c2[row].push(*v);
            }
        }
    }
    let rows = study
        .mesh_sizes
        .iter()
        .enumerate()
        .map(|(row, &l)| ReportRow {
            mesh_size: l,
            c1: study.estimators.c1().then(|| ReplicationStats::from_samples(&samples_c1[row])),
            c2: study.estimators.c2().then(|| ReplicationStats::from_samples(&samples_c2[row])),
        })
        .collect();
    Ok(ReplicationReport {
        rows,
        samples_c1,
        samples_c2,
        wall_time: start.elapsed(),
    })
}

pub const CSV_HEADER: &str = "L,average1,average2,stddev1,stddev2";
const MISSING: &str = "NA";

fn field(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.10}"),
        None => MISSING.to_string(),
    }
}

/// Writes `L,average1,average2,stddev1,stddev2` rows with ten fractional
/// digits. Estimators not run, and standard deviations of a single
/// replication, are written as `NA`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut out: W) -> Result<()> {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mesh_size,
            field(r.c1.map(|x| x.mean)),
            field(r.c2.map(|x| x.mean)),
            field(r.c1.and_then(|x| x.std_dev)),
            field(r.c2.and_then(|x| x.std_dev)),
        ));
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// One parsed CSV row: `(L, average1, average2, stddev1, stddev2)`.
pub type CsvRow = (usize, Option<f64>, Option<f64>, Option<f64>, Option<f64>);

pub fn read_report_csv<R: BufRead>(input: R) -> Result<Vec<CsvRow>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        _ => return Err(MeshError::Config("report: missing header".into())),
    }
    let parse = |s: &str| -> Result<Option<f64>> {
        if s == MISSING {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| MeshError::Config(format!("report: bad number {s}")))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(MeshError::Config(format!("report: bad row {line}")));
        }
        let l = c[0]
            .parse()
            .map_err(|_| MeshError::Config(format!("report: bad L {}", c[0])))?;
        rows.push((l, parse(c[1])?, parse(c[2])?, parse(c[3])?, parse(c[4])?));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub mesh_width: f64,
    pub c_delta: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln |c - c_Δ|` against `ln |Δ|`.
    pub slope: f64,
}

/// Discretization error of the Brownian example on uniform grids.
pub fn run_convergence_study(steps: &[usize]) -> Result<ConvergenceReport> {
    if steps.len() < 3 {
        return Err(param("n", "a convergence study needs at least 3 grid sizes"));
    }
    if steps.iter().any(|&n| n < 2) {
        return Err(param("n", "grid sizes must be at least 2"));
    }
    let c = reference_c_brownian();
    let rows: Vec<ConvergenceRow> = steps
        .iter()
        .map(|&n| {
            let cd = reference_c_delta_brownian(n);
            ConvergenceRow {
                steps: n,
                mesh_width: 1.0 / n as f64,
                c_delta: cd,
                abs_error: (c - cd).abs(),
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.mesh_width.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.abs_error.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(ConvergenceReport {
        rows,
        slope: sxy / sxx,
    })
}

pub fn write_convergence_csv<W: Write>(report: &ConvergenceReport, mut out: W) -> Result<()> {
    let mut s = String::from("n,mesh_width,c_delta,abs_error\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{:.10},{:.10},{:.10}\n",
            r.steps, r.mesh_width, r.c_delta, r.abs_error
        ));
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}
