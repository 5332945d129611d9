use std::f64::consts::PI;

use super::{CvaProblem, EstimateResult, ReplicationStats, RunEcho};
use crate::error::{param, Result};
use crate::exec::Execution;
use crate::paths::{derive_seed, path_stream, FamilyTag, PathFamily};

/// `c = ∫₀¹ E[B(t) ∨ 0] dt = 2 / (3√(2π))` for the Brownian example.
pub fn reference_c_brownian() -> f64 {
    2.0 / (3.0 * (2.0 * PI).sqrt())
}

/// `c_Δ = Σ_{i<n} (1/n)·√(t_i / 2π)` on `t_i = i/n`.
pub fn reference_c_delta_brownian(n: usize) -> f64 {
    assert!(n >= 1, "grid needs at least one step");
    let dt = 1.0 / n as f64;
    (0..n)
        .map(|i| dt * (i as f64 / n as f64 / (2.0 * PI)).sqrt())
        .sum()
}

/// Brute-force nested Monte Carlo estimate of the discretized CVA.
///
/// For each outer path and grid step, the conditional expectation of the
/// alive payoffs is replaced by an average over `inner` fresh continuations
/// sampled exactly from the outer state. The reported `std_dev` is across
/// outer paths, so `stats.std_error()` includes the inner noise.
pub fn nested_mc_oracle(
    problem: &CvaProblem,
    outer: usize,
    inner: usize,
    seed: u64,
    exec: Execution,
) -> Result<EstimateResult> {
    if outer < 1 || inner < 1 {
        return Err(param("counts", "outer and inner sample counts must be positive"));
    }
    let model = &problem.model;
    let part = &problem.partition;
    let times = part.times();
    let fam = PathFamily::simulate(model, part, outer, seed, FamilyTag::Other(0), exec)?;
    let contracts = &problem.portfolio.contracts;
    let mats = &problem.portfolio.maturities;
    let dim = model.total_dim();

    let per_path: Vec<Result<f64>> = exec.map_range(outer, |ell| {
        let mut total = 0.0;
        let mut state = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        for i in 0..part.steps() {
            let alive: Vec<usize> = problem.alive(i).collect();
            let g = problem.hazard.eval(times[i], fam.state(ell, i));
            if alive.is_empty() || g == 0.0 {
                continue;
            }
            // Maturity indices to visit, increasing.
            let mut ks: Vec<usize> = alive.iter().map(|&j| contracts[j].maturity).collect();
            ks.sort_unstable();
            ks.dedup();
            let mut rng = path_stream(derive_seed(seed, ell as u64), FamilyTag::Other(1), i);
            let mut sum = 0.0;
            for _ in 0..inner {
                state.copy_from_slice(fam.state(ell, i));
                let mut t = times[i];
                let mut v = 0.0;
                for &k in &ks {
                    let tk = mats[k - 1];
                    if tk > t {
                        model.step_full_in_place(tk - t, &mut state, &mut scratch, &mut rng)?;
                        t = tk;
                    }
                    for &j in alive.iter().filter(|&&j| contracts[j].maturity == k) {
                        let c = &contracts[j];
                        v += c.payoff.eval(&model.project(&state, c.factor)?.values);
                    }
                }
                sum += v;
            }
            total += (times[i + 1] - times[i]) * g * (sum / inner as f64).max(0.0);
        }
        Ok(total)
    });
    let samples = per_path.into_iter().collect::<Result<Vec<f64>>>()?;
    let stats = ReplicationStats::from_samples(&samples);
    Ok(EstimateResult {
        value: stats.mean,
        stats,
        config: RunEcho {
            mesh_size: outer,
            eval_size: Some(inner),
            steps: part.steps(),
            epsilon: None,
            seeds: vec![seed],
        },
    })
}
