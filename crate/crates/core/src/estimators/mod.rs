//! CVA estimators built on the stochastic mesh, plus reference values.
//!
//! With a grid `t_0 < … < t_n` and contracts alive at step `i` when
//! `T_k >= t_{i+1}`:
//!
//! * [`estimate_c1`] averages `Σ_i Δt_i·g(t_i, X_ℓ(t_i))·max(V_i(X_ℓ(t_i)), 0)`
//!   over the mesh family itself, where `V_i` is the netted mesh value.
//! * [`estimate_c2`] uses the mesh only for the sign of `V_i`, and realizes
//!   the payoffs along an independent evaluation family.

mod lemma;
mod portfolio;
mod reference;
mod schedule;

pub use lemma::indicator_gap_bound_check;
pub use portfolio::{Contract, ContractSpec, HazardLoss, Payoff, PayoffSpec, Portfolio, PortfolioConfig};
pub use reference::{nested_mc_oracle, reference_c_brownian, reference_c_delta_brownian};
pub use schedule::{EpsilonSchedule, Variant, DEFAULT_C0, DEFAULT_DELTA};

use std::sync::Arc;

use crate::error::{param, Result};
use crate::exec::Execution;
use crate::mesh::{Branch, MeshContext};
use crate::models::ModelSpec;
use crate::paths::{FamilyTag, PathFamily, Partition};

/// Everything that defines the CVA being estimated.
#[derive(Debug, Clone)]
pub struct CvaProblem {
    pub model: Arc<ModelSpec>,
    pub portfolio: Portfolio,
    pub hazard: HazardLoss,
    pub partition: Partition,
}

impl CvaProblem {
    pub fn new(
        model: Arc<ModelSpec>,
        portfolio: Portfolio,
        hazard: HazardLoss,
        partition: Partition,
    ) -> Result<Self> {
        portfolio.validate(&model, &partition)?;
        Ok(CvaProblem {
            model,
            portfolio,
            hazard,
            partition,
        })
    }

    /// One-dimensional Brownian motion, `F(x) = x` paid at `T = 1`, `g ≡ 1`,
    /// `t_i = i/n`. Its exact CVA is `2 / (3√(2π))`.
    pub fn brownian_example(n: usize) -> Result<Self> {
        Self::new(
            Arc::new(ModelSpec::brownian_1d()),
            Portfolio::new(vec![Contract::new(1, 1, Payoff::identity())], vec![1.0]),
            HazardLoss::unit(),
            Partition::uniform(1.0, n)?,
        )
    }

    pub fn with_hazard(&self, hazard: HazardLoss) -> Self {
        CvaProblem {
            hazard,
            ..self.clone()
        }
    }

    pub fn with_portfolio(&self, portfolio: Portfolio) -> Result<Self> {
        Self::new(self.model.clone(), portfolio, self.hazard.clone(), self.partition.clone())
    }

    /// Indices of contracts alive over step `i`, i.e. with `T_k >= t_{i+1}`.
    fn alive(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let next = self.partition.times()[i + 1];
        self.portfolio
            .contracts
            .iter()
            .enumerate()
            .filter(move |(_, c)| self.portfolio.maturities[c.maturity - 1] >= next)
            .map(|(j, _)| j)
    }
}

/// Mean and unbiased standard deviation of a set of replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationStats {
    pub count: usize,
    pub mean: f64,
    /// `None` when `count < 2`.
    pub std_dev: Option<f64>,
}

impl ReplicationStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let count = xs.len();
        let mean = if count == 0 {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / count as f64
        };
        let std_dev = (count >= 2).then(|| {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
        });
        ReplicationStats {
            count,
            mean,
            std_dev,
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> Option<f64> {
        self.std_dev.map(|s| s / (self.count as f64).sqrt())
    }
}

/// Settings echoed back with every estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEcho {
    pub mesh_size: usize,
    pub eval_size: Option<usize>,
    pub steps: usize,
    pub epsilon: Option<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub value: f64,
    pub stats: ReplicationStats,
    pub config: RunEcho,
}

/// `Σ_{alive (m,k)} (Q_{t_i,T_k,ε} F_{m,k})(π_m x)` for a full state `x`.
pub fn netted_mesh_value(ctx: &MeshContext, problem: &CvaProblem, i: usize, x: &[f64]) -> Result<f64> {
    if i + 1 >= problem.partition.times().len() {
        return Err(param("i", "no step starts at the last grid point"));
    }
    let mut v = 0.0;
    for j in problem.alive(i) {
        let c = &problem.portfolio.contracts[j];
        let px = problem.model.project(x, c.factor)?;
        v += ctx.apply(c.factor, &|y: &[f64]| c.payoff.eval(y), i, c.maturity, &px)?;
    }
    Ok(v)
}

/// Netted mesh values at step `i` for every path of `queries`, with
/// `whitened(m)` supplying the whitened `π_m` positions of those paths.
fn netted_values<'a>(
    ctx: &MeshContext,
    problem: &CvaProblem,
    node_values: &[Vec<f64>],
    i: usize,
    queries: &PathFamily,
    whitened: &mut dyn FnMut(usize) -> Result<&'a [f64]>,
    exec: Execution,
) -> Result<Vec<f64>> {
    let n_q = queries.num_paths();
    let mut total = vec![0.0; n_q];
    let mut part = vec![0.0; n_q];
    for j in problem.alive(i) {
        let c = &problem.portfolio.contracts[j];
        match ctx.branch(i, c.maturity)? {
            Branch::Mesh => {
                let z = whitened(c.factor)?;
                ctx.eval_whitened(c.factor, i, c.maturity, &node_values[j], z, &mut part, exec)?;
            }
            Branch::Window => {
                let mut proj = vec![0.0; problem.model.projected_dim(c.factor)?];
                for (ell, p) in part.iter_mut().enumerate() {
                    problem.model.project_into(queries.state(ell, i), c.factor, &mut proj)?;
                    *p = c.payoff.eval(&proj);
                }
            }
            Branch::Expired => part.fill(0.0),
        }
        for (t, p) in total.iter_mut().zip(&part) {
            *t += p;
        }
    }
    Ok(total)
}

fn contract_node_values(ctx: &MeshContext, problem: &CvaProblem) -> Result<Vec<Vec<f64>>> {
    problem
        .portfolio
        .contracts
        .iter()
        .map(|c| ctx.node_values(c.factor, c.maturity, &|y: &[f64]| c.payoff.eval(y)))
        .collect()
}

fn check_family(problem: &CvaProblem, fam: &PathFamily) -> Result<()> {
    if fam.partition() != &problem.partition {
        return Err(param("family", "path family was simulated on a different partition"));
    }
    Ok(())
}

/// Builds the mesh context for `problem` from the family `(seed, Mesh)`.
pub fn build_mesh(problem: &CvaProblem, mesh_size: usize, epsilon: f64, seed: u64, exec: Execution) -> Result<MeshContext> {
    if mesh_size < 2 {
        return Err(param("L", format!("mesh needs at least 2 paths, got {mesh_size}")));
    }
    let fam = PathFamily::simulate(&problem.model, &problem.partition, mesh_size, seed, FamilyTag::Mesh, exec)?;
    MeshContext::new(problem.model.clone(), Arc::new(fam), epsilon)
}

/// `ĉ₁` with the mesh family doubling as the outer Monte Carlo sample.
pub fn c1_from_mesh(ctx: &MeshContext, problem: &CvaProblem, exec: Execution) -> Result<f64> {
    let fam = ctx.family();
    check_family(problem, fam)?;
    let times = problem.partition.times();
    let node_values = contract_node_values(ctx, problem)?;
    let mut acc = vec![0.0; fam.num_paths()];
    for i in 0..problem.partition.steps() {
        let dt = times[i + 1] - times[i];
        let v = netted_values(ctx, problem, &node_values, i, fam, &mut |m| Ok(ctx.whitened_sources(i, m)), exec)?;
        for (ell, (a, v)) in acc.iter_mut().zip(&v).enumerate() {
            *a += dt * problem.hazard.eval(times[i], fam.state(ell, i)) * v.max(0.0);
        }
    }
    Ok(acc.iter().sum::<f64>() / fam.num_paths() as f64)
}

/// `ĉ₂` with the indicator taken on `exposure_map(V)`; the plain estimator
/// uses the identity map.
pub fn c2_from_mesh_with<M>(
    ctx: &MeshContext,
    eval: &PathFamily,
    problem: &CvaProblem,
    exposure_map: M,
    exec: Execution,
) -> Result<f64>
where
    M: Fn(f64) -> f64,
{
    check_family(problem, ctx.family())?;
    check_family(problem, eval)?;
    let model = &problem.model;
    let times = problem.partition.times();
    let node_values = contract_node_values(ctx, problem)?;
    // F_c(π_m X'(T_k)) per contract and evaluation path.
    let realized: Vec<Vec<f64>> = problem
        .portfolio
        .contracts
        .iter()
        .map(|c| {
            let ti = problem.partition.maturity_index(c.maturity)?;
            let mut proj = vec![0.0; model.projected_dim(c.factor)?];
            (0..eval.num_paths())
                .map(|ell| {
                    model.project_into(eval.state(ell, ti), c.factor, &mut proj)?;
                    Ok(c.payoff.eval(&proj))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let big_m = model.num_contract_factors();
    let mut acc = vec![0.0; eval.num_paths()];
    let mut cache: Vec<Vec<f64>> = vec![Vec::new(); big_m];
    for i in 0..problem.partition.steps() {
        let dt = times[i + 1] - times[i];
        for m in 1..=big_m {
            let d = model.projected_dim(m)?;
            let buf = &mut cache[m - 1];
            buf.resize(eval.num_paths() * d, 0.0);
            let mut proj = vec![0.0; d];
            for ell in 0..eval.num_paths() {
                model.project_into(eval.state(ell, i), m, &mut proj)?;
                model.whiten_into(m, &proj, &mut buf[ell * d..(ell + 1) * d])?;
            }
        }
        let cache_ref = &cache;
        let v = netted_values(ctx, problem, &node_values, i, eval, &mut |m| Ok(&cache_ref[m - 1][..]), exec)?;
        let alive: Vec<usize> = problem.alive(i).collect();
        for (ell, a) in acc.iter_mut().enumerate() {
            if exposure_map(v[ell]) >= 0.0 {
                let mut payoff = 0.0;
                for &j in &alive {
                    payoff += realized[j][ell];
                }
                *a += dt * problem.hazard.eval(times[i], eval.state(ell, i)) * payoff;
            }
        }
    }
    Ok(acc.iter().sum::<f64>() / eval.num_paths() as f64)
}

pub fn c2_from_mesh(ctx: &MeshContext, eval: &PathFamily, problem: &CvaProblem, exec: Execution) -> Result<f64> {
    c2_from_mesh_with(ctx, eval, problem, |v| v, exec)
}

fn single(value: f64, config: RunEcho) -> EstimateResult {
    EstimateResult {
        value,
        stats: ReplicationStats::from_samples(&[value]),
        config,
    }
}

/// `ĉ₁` on a freshly simulated mesh family of size `mesh_size`.
pub fn estimate_c1(
    problem: &CvaProblem,
    mesh_size: usize,
    schedule: &EpsilonSchedule,
    seed: u64,
    exec: Execution,
) -> Result<EstimateResult> {
    let eps = schedule.for_variant(Variant::C1).epsilon_for(mesh_size, problem.partition.eps0());
    let ctx = build_mesh(problem, mesh_size, eps, seed, exec)?;
    let value = c1_from_mesh(&ctx, problem, exec)?;
    Ok(single(
        value,
        RunEcho {
            mesh_size,
            eval_size: None,
            steps: problem.partition.steps(),
            epsilon: Some(ctx.epsilon()),
            seeds: vec![seed],
        },
    ))
}

/// `ĉ₂` with a mesh of `mesh_size` paths and `eval_size` independent
/// evaluation paths.
pub fn estimate_c2(
    problem: &CvaProblem,
    mesh_size: usize,
    eval_size: usize,
    schedule: &EpsilonSchedule,
    seed: u64,
    exec: Execution,
) -> Result<EstimateResult> {
    estimate_c2_with(problem, mesh_size, eval_size, schedule, seed, |v| v, exec)
}

/// [`estimate_c2`] with the sign taken on `exposure_map(V)`.
pub fn estimate_c2_with<M: Fn(f64) -> f64>(
    problem: &CvaProblem,
    mesh_size: usize,
    eval_size: usize,
    schedule: &EpsilonSchedule,
    seed: u64,
    exposure_map: M,
    exec: Execution,
) -> Result<EstimateResult> {
    if eval_size < 1 {
        return Err(param("L0", "at least one evaluation path is required"));
    }
    let eps = schedule.for_variant(Variant::C2).epsilon_for(mesh_size, problem.partition.eps0());
    let ctx = build_mesh(problem, mesh_size, eps, seed, exec)?;
    let eval = PathFamily::simulate(&problem.model, &problem.partition, eval_size, seed, FamilyTag::Evaluation, exec)?;
    let value = c2_from_mesh_with(&ctx, &eval, problem, exposure_map, exec)?;
    Ok(single(
        value,
        RunEcho {
            mesh_size,
            eval_size: Some(eval_size),
            steps: problem.partition.steps(),
            epsilon: Some(ctx.epsilon()),
            seeds: vec![seed],
        },
    ))
}

/// `Σ_i Δt_i·g·max(Σ_alive F(π_m X_ℓ(t_i)), 0)` averaged over a family:
/// the value `ĉ₁` takes when every step falls inside the window.
pub fn intrinsic_estimate(problem: &CvaProblem, fam: &PathFamily) -> Result<f64> {
    let times = problem.partition.times();
    let mut acc = vec![0.0; fam.num_paths()];
    for i in 0..problem.partition.steps() {
        let dt = times[i + 1] - times[i];
        for (ell, a) in acc.iter_mut().enumerate() {
            let x = fam.state(ell, i);
            let mut v = 0.0;
            for j in problem.alive(i) {
                let c = &problem.portfolio.contracts[j];
                v += c.payoff.eval(&problem.model.project(x, c.factor)?.values);
            }
            *a += dt * problem.hazard.eval(times[i], x) * v.max(0.0);
        }
    }
    Ok(acc.iter().sum::<f64>() / fam.num_paths() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        let s = ReplicationStats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std_dev.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s.std_error().unwrap() - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        let one = ReplicationStats::from_samples(&[0.3]);
        assert_eq!(one.std_dev, None);
        assert_eq!(one.std_error(), None);
    }

    #[test]
    fn alive_rule() {
        let p = CvaProblem::new(
            Arc::new(ModelSpec::brownian_1d()),
            Portfolio::new(
                vec![Contract::new(1, 1, Payoff::identity()), Contract::new(1, 2, Payoff::identity())],
                vec![0.5, 1.0],
            ),
            HazardLoss::unit(),
            Partition::build(&[0.5, 1.0], crate::paths::GridRule::Steps(4)).unwrap(),
        )
        .unwrap();
        // t = 0, .25, .5, .75, 1
        assert_eq!(p.alive(0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(p.alive(1).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(p.alive(2).collect::<Vec<_>>(), vec![1]);
        assert_eq!(p.alive(3).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn mesh_size_guard() {
        let p = CvaProblem::brownian_example(10).unwrap();
        let s = EpsilonSchedule::with_defaults(Variant::C1, 1);
        assert!(estimate_c1(&p, 1, &s, 0, Execution::Sequential).is_err());
        assert!(estimate_c2(&p, 1, 10, &s, 0, Execution::Sequential).is_err());
        assert!(estimate_c2(&p, 4, 0, &s, 0, Execution::Sequential).is_err());
    }

    #[test]
    fn zero_hazard_gives_zero() {
        let p = CvaProblem::brownian_example(10).unwrap().with_hazard(HazardLoss::zero());
        let s = EpsilonSchedule::with_defaults(Variant::C1, 1);
        assert_eq!(estimate_c1(&p, 20, &s, 1, Execution::Sequential).unwrap().value, 0.0);
        assert_eq!(estimate_c2(&p, 20, 50, &s, 1, Execution::Sequential).unwrap().value, 0.0);
    }

    #[test]
    fn empty_portfolio_nets_to_zero() {
        let base = CvaProblem::brownian_example(10).unwrap();
        let p = base.with_portfolio(Portfolio::new(vec![], vec![1.0])).unwrap();
        let ctx = build_mesh(&p, 10, 0.01, 3, Execution::Sequential).unwrap();
        assert_eq!(netted_mesh_value(&ctx, &p, 2, &[0.4]).unwrap(), 0.0);
    }

    #[test]
    fn offsetting_contracts_cancel() {
        let base = CvaProblem::brownian_example(10).unwrap();
        let f = Payoff::Call { weights: vec![1.0], strike: 0.1 };
        let g = f.clone();
        let p = base
            .with_portfolio(Portfolio::new(
                vec![
                    Contract::new(1, 1, f),
                    Contract::new(1, 1, Payoff::custom(move |x| -g.eval(x), 1.0)),
                ],
                vec![1.0],
            ))
            .unwrap();
        let ctx = build_mesh(&p, 30, 0.01, 3, Execution::Sequential).unwrap();
        for x in [-1.0, 0.0, 0.7] {
            assert_eq!(netted_mesh_value(&ctx, &p, 4, &[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn window_gives_payoff() {
        let p = CvaProblem::brownian_example(10).unwrap();
        // ε = 0.15 puts t_9 = 0.9 inside [0.85, 1].
        let ctx = build_mesh(&p, 10, 0.15, 3, Execution::Sequential).unwrap();
        assert_eq!(netted_mesh_value(&ctx, &p, 9, &[0.37]).unwrap(), 0.37);
        assert!(netted_mesh_value(&ctx, &p, 10, &[0.37]).is_err());
    }

    #[test]
    fn vectorized_matches_scalar_netting() {
        let p = CvaProblem::brownian_example(10).unwrap();
        let ctx = build_mesh(&p, 40, 0.01, 9, Execution::Sequential).unwrap();
        let nv = contract_node_values(&ctx, &p).unwrap();
        for i in [0, 4, 9] {
            let v = netted_values(&ctx, &p, &nv, i, ctx.family(), &mut |m| Ok(ctx.whitened_sources(i, m)), Execution::Parallel)
                .unwrap();
            for ell in 0..40 {
                let s = netted_mesh_value(&ctx, &p, i, ctx.family().state(ell, i)).unwrap();
                assert_eq!(s.to_bits(), v[ell].to_bits());
            }
        }
    }

    #[test]
    fn all_negative_exposure_kills_c2() {
        // F(x) = x - 100: netted values are far below zero everywhere.
        let base = CvaProblem::brownian_example(10).unwrap();
        let p = base
            .with_portfolio(Portfolio::new(
                vec![Contract::new(1, 1, Payoff::Linear { weights: vec![1.0], offset: -100.0 })],
                vec![1.0],
            ))
            .unwrap();
        let s = EpsilonSchedule::with_defaults(Variant::C2, 1);
        assert_eq!(estimate_c2(&p, 50, 200, &s, 5, Execution::Sequential).unwrap().value, 0.0);
    }
}
