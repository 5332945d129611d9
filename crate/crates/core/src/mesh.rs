//! Stochastic mesh operator.
//!
//! For a mesh family `X_1..X_L`, grid time `t`, maturity `T_k` and factor `m`,
//!
//! ```text
//! (Q f)(x) = (1/L) Σ_ℓ f(y_ℓ) p(T_k - t, x, y_ℓ) / q(y_ℓ)     t < T_k - ε
//!          = f(x)                                           T_k - ε <= t <= T_k
//!          = 0                                              t > T_k
//! q(y)     = (1/L) Σ_ℓ p(T_k - t, π_m X_ℓ(t), y),           y_ℓ = π_m X_ℓ(T_k)
//! ```
//!
//! All densities are handled in whitened coordinates `z = C_m⁻¹ x`, where the
//! Gaussian kernel reduces to `exp(-|z_y - z_x - ν·τ|² / 2τ)` up to a
//! normalizer that cancels in the ratio `p / q`. The node denominators are
//! stored as `b_ℓ = ln Σ_j exp(-|…|²/2τ) - ln L`, so a weight is a single
//! `exp(-|…|²/2τ - b_ℓ)`.

use std::sync::{Arc, OnceLock};

use crate::error::{param, MeshError, Result};
use crate::exec::Execution;
use crate::kernel;
use crate::models::{ModelSpec, ProjectedState};
use crate::paths::PathFamily;

/// Which case of the operator definition applies at `(t_i, T_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `t < T_k - ε`: density-ratio average over the mesh nodes.
    Mesh,
    /// `T_k - ε <= t <= T_k`: identity.
    Window,
    /// `t > T_k`: zero.
    Expired,
}

// Queries per parallel work item in batched evaluation.
const QUERY_TILE: usize = 64;

/// Mesh family, model, window width and cached node denominators.
#[derive(Debug)]
pub struct MeshContext {
    model: Arc<ModelSpec>,
    family: Arc<PathFamily>,
    epsilon: f64,
    /// Whitened `π_m X_ℓ(t_i)`, indexed `[i * M + m - 1]`, each `L × Ñ_m`.
    whitened: Vec<Vec<f64>>,
    /// Node log-denominators `b_ℓ`, indexed by `slot(i, k, m)`.
    bias: Vec<OnceLock<Arc<[f64]>>>,
}

impl MeshContext {
    /// Builds the context. `epsilon` must be positive; values at or above
    /// `ε₀` are clamped to `0.999·ε₀` with a warning.
    pub fn new(model: Arc<ModelSpec>, family: Arc<PathFamily>, epsilon: f64) -> Result<Self> {
        if family.dim() != model.total_dim() {
            return Err(MeshError::Dimension {
                expected: model.total_dim(),
                got: family.dim(),
            });
        }
        if family.num_paths() < 1 {
            return Err(param("L", "mesh needs at least one path"));
        }
        if !model.has_densities() {
            return Err(MeshError::NoDensity(1));
        }
        let epsilon = clamp_epsilon(epsilon, family.partition().eps0())?;
        let big_m = model.num_contract_factors();
        let grid = family.partition().times().len();
        let mut whitened = Vec::with_capacity(grid * big_m);
        for i in 0..grid {
            for m in 1..=big_m {
                let d = model.projected_dim(m)?;
                let mut buf = vec![0.0; family.num_paths() * d];
                let mut proj = vec![0.0; d];
                for ell in 0..family.num_paths() {
                    model.project_into(family.state(ell, i), m, &mut proj)?;
                    model.whiten_into(m, &proj, &mut buf[ell * d..(ell + 1) * d])?;
                }
                whitened.push(buf);
            }
        }
        let slots = grid * family.partition().num_maturities() * big_m;
        Ok(MeshContext {
            model,
            family,
            epsilon,
            whitened,
            bias: (0..slots).map(|_| OnceLock::new()).collect(),
        })
    }

    /// A context over the same family with another window width. Cached
    /// denominators are shared.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let epsilon = clamp_epsilon(epsilon, self.family.partition().eps0())?;
        Ok(MeshContext {
            model: Arc::clone(&self.model),
            family: Arc::clone(&self.family),
            epsilon,
            whitened: self.whitened.clone(),
            bias: self
                .bias
                .iter()
                .map(|c| {
                    let fresh = OnceLock::new();
                    if let Some(v) = c.get() {
                        let _ = fresh.set(Arc::clone(v));
                    }
                    fresh
                })
                .collect(),
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn family(&self) -> &PathFamily {
        &self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn num_nodes(&self) -> usize {
        self.family.num_paths()
    }

    pub fn branch(&self, i: usize, k: usize) -> Result<Branch> {
        let p = self.family.partition();
        let t = *p
            .times()
            .get(i)
            .ok_or_else(|| param("i", format!("grid index {i} out of range")))?;
        let tk = p.maturity(k)?;
        Ok(if t > tk {
            Branch::Expired
        } else if t < tk - self.epsilon {
            Branch::Mesh
        } else {
            Branch::Window
        })
    }

    fn slot(&self, i: usize, k: usize, m: usize) -> usize {
        let big_k = self.family.partition().num_maturities();
        let big_m = self.model.num_contract_factors();
        (i * big_k + (k - 1)) * big_m + (m - 1)
    }

    fn whitened_at(&self, i: usize, m: usize) -> &[f64] {
        &self.whitened[i * self.model.num_contract_factors() + m - 1]
    }

    /// `τ = T_k - t_i` and `h = 1 / 2τ`.
    fn step(&self, i: usize, k: usize) -> Result<(f64, f64)> {
        let p = self.family.partition();
        let t = p.times()[i];
        let tk = p.maturity(k)?;
        if !(t < tk) {
            return Err(MeshError::NotBeforeMaturity { t, maturity: tk });
        }
        let tau = tk - t;
        Ok((tau, 0.5 / tau))
    }

    /// Whitened mesh positions at `t_i`, shifted by the whitened drift over `τ`.
    fn shifted_sources(&self, i: usize, m: usize, tau: f64) -> Result<Vec<f64>> {
        let nu = self.model.whitened_drift(m)?;
        let d = nu.len();
        let mut pts = self.whitened_at(i, m).to_vec();
        if nu.iter().any(|&v| v != 0.0) {
            for row in pts.chunks_exact_mut(d) {
                for (z, v) in row.iter_mut().zip(nu) {
                    *z += v * tau;
                }
            }
        }
        Ok(pts)
    }

    fn shift_query(&self, m: usize, z: &mut [f64], tau: f64) -> Result<()> {
        let nu = self.model.whitened_drift(m)?;
        if nu.iter().any(|&v| v != 0.0) {
            for (z, v) in z.iter_mut().zip(nu) {
                *z += v * tau;
            }
        }
        Ok(())
    }

    fn check_indices(&self, m: usize, i: usize, k: usize) -> Result<()> {
        self.model.projected_dim(m)?;
        self.family.partition().maturity(k)?;
        if i >= self.family.partition().times().len() {
            return Err(param("i", format!("grid index {i} out of range")));
        }
        Ok(())
    }

    /// Node log-denominators for `(t_i, T_k, m)`, computed on first use.
    pub(crate) fn node_bias(&self, m: usize, i: usize, k: usize, exec: Execution) -> Result<Arc<[f64]>> {
        self.check_indices(m, i, k)?;
        let slot = self.slot(i, k, m);
        if let Some(b) = self.bias[slot].get() {
            return Ok(Arc::clone(b));
        }
        let (tau, h) = self.step(i, k)?;
        let d = self.model.projected_dim(m)?;
        let sources = self.shifted_sources(i, m, tau)?;
        let ti = self.family.partition().maturity_index(k)?;
        let nodes = self.whitened_at(ti, m);
        let ln_l = (self.num_nodes() as f64).ln();
        let b: Arc<[f64]> = exec
            .map_range(self.num_nodes(), |j| {
                kernel::log_sum(&sources, d, &nodes[j * d..(j + 1) * d], h) - ln_l
            })
            .into();
        Ok(Arc::clone(self.bias[slot].get_or_init(|| b)))
    }

    /// Fills the denominator cache for `(m, k)` at every grid time in the
    /// mesh branch.
    pub fn precompute(&self, pairs: &[(usize, usize)], exec: Execution) -> Result<()> {
        for &(m, k) in pairs {
            for i in 0..self.family.partition().times().len() {
                if self.branch(i, k)? == Branch::Mesh {
                    self.node_bias(m, i, k, exec)?;
                }
            }
        }
        Ok(())
    }

    /// `q_{t_i,T_k}(y)` for an arbitrary projected point `y`.
    pub fn denominator(&self, m: usize, i: usize, k: usize, y: &ProjectedState) -> Result<f64> {
        self.check_indices(m, i, k)?;
        let d = self.check_state(m, y)?;
        let (tau, h) = self.step(i, k)?;
        let sources = self.shifted_sources(i, m, tau)?;
        let mut z = vec![0.0; d];
        self.model.whiten_into(m, &y.values, &mut z)?;
        let ln_l = (self.num_nodes() as f64).ln();
        let log_q = self.model.log_normalizer(m, tau)? + (kernel::log_sum(&sources, d, &z, h) - ln_l);
        Ok(log_q.exp())
    }

    fn check_state(&self, m: usize, x: &ProjectedState) -> Result<usize> {
        let d = self.model.projected_dim(m)?;
        if x.m != m {
            return Err(MeshError::FactorIndex { index: x.m, max: m });
        }
        if x.values.len() != d {
            return Err(MeshError::Dimension {
                expected: d,
                got: x.values.len(),
            });
        }
        Ok(d)
    }

    /// `f(π_m X_ℓ(T_k))` for every node.
    pub(crate) fn node_values<F>(&self, m: usize, k: usize, f: &F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        let d = self.model.projected_dim(m)?;
        let ti = self.family.partition().maturity_index(k)?;
        let mut proj = vec![0.0; d];
        (0..self.num_nodes())
            .map(|ell| {
                self.model.project_into(self.family.state(ell, ti), m, &mut proj)?;
                Ok(f(&proj))
            })
            .collect()
    }

    /// Mesh-branch evaluation at whitened queries (`Ñ_m` values per query,
    /// not yet drift-shifted). Writes `(Q f)` for each query into `out`.
    pub(crate) fn eval_whitened(
        &self,
        m: usize,
        i: usize,
        k: usize,
        values: &[f64],
        queries: &[f64],
        out: &mut [f64],
        exec: Execution,
    ) -> Result<()> {
        let (tau, h) = self.step(i, k)?;
        let bias = self.node_bias(m, i, k, exec)?;
        let d = self.model.projected_dim(m)?;
        let nodes = self.whitened_at(self.family.partition().maturity_index(k)?, m);
        let nu = self.model.whitened_drift(m)?;
        let inv_l = 1.0 / self.num_nodes() as f64;
        exec.for_each_chunk_mut(out, QUERY_TILE, |tile, chunk| {
            let mut z = vec![0.0; d];
            for (r, slot) in chunk.iter_mut().enumerate() {
                let q = tile * QUERY_TILE + r;
                z.copy_from_slice(&queries[q * d..(q + 1) * d]);
                if nu.iter().any(|&v| v != 0.0) {
                    for (zz, v) in z.iter_mut().zip(nu) {
                        *zz += v * tau;
                    }
                }
                *slot = kernel::weighted_sum(nodes, d, &z, h, &bias, values) * inv_l;
            }
        });
        Ok(())
    }

    /// Whitened mesh positions `π_m X_ℓ(t_i)` for all ℓ.
    pub(crate) fn whitened_sources(&self, i: usize, m: usize) -> &[f64] {
        self.whitened_at(i, m)
    }

    /// `(Q_{t_i,T_k,ε} f)(x)`.
    pub fn apply<F>(&self, m: usize, f: &F, i: usize, k: usize, x: &ProjectedState) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        self.check_indices(m, i, k)?;
        let d = self.check_state(m, x)?;
        match self.branch(i, k)? {
            Branch::Expired => Ok(0.0),
            Branch::Window => Ok(f(&x.values)),
            Branch::Mesh => {
                let (tau, h) = self.step(i, k)?;
                let bias = self.node_bias(m, i, k, Execution::Sequential)?;
                let values = self.node_values(m, k, f)?;
                let mut z = vec![0.0; d];
                self.model.whiten_into(m, &x.values, &mut z)?;
                self.shift_query(m, &mut z, tau)?;
                let nodes = self.whitened_at(self.family.partition().maturity_index(k)?, m);
                Ok(kernel::weighted_sum(nodes, d, &z, h, &bias, &values) * (1.0 / self.num_nodes() as f64))
            }
        }
    }

    /// [`apply`](Self::apply) at many query points; elementwise bit-identical
    /// to the scalar call.
    pub fn apply_batch<F>(
        &self,
        m: usize,
        f: &F,
        i: usize,
        k: usize,
        queries: &[ProjectedState],
        exec: Execution,
    ) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        self.check_indices(m, i, k)?;
        let d = self.model.projected_dim(m)?;
        for x in queries {
            self.check_state(m, x)?;
        }
        match self.branch(i, k)? {
            Branch::Expired => Ok(vec![0.0; queries.len()]),
            Branch::Window => Ok(queries.iter().map(|x| f(&x.values)).collect()),
            Branch::Mesh => {
                let values = self.node_values(m, k, f)?;
                let mut z = vec![0.0; queries.len() * d];
                for (x, row) in queries.iter().zip(z.chunks_exact_mut(d)) {
                    self.model.whiten_into(m, &x.values, row)?;
                }
                let mut out = vec![0.0; queries.len()];
                self.eval_whitened(m, i, k, &values, &z, &mut out, exec)?;
                Ok(out)
            }
        }
    }
}

fn clamp_epsilon(epsilon: f64, eps0: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(param("epsilon", format!("must be positive, got {epsilon}")));
    }
    if epsilon >= eps0 {
        let clamped = 0.999 * eps0;
        log::warn!("epsilon {epsilon} >= eps0 {eps0}; clamped to {clamped}");
        return Ok(clamped);
    }
    Ok(epsilon)
}
