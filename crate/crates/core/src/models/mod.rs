//! Gaussian factor models with closed-form transition densities.
//!
//! The state is `X = (X⁰, X¹, …, Xᴹ)`: a macro block of dimension `N₀ ≥ 0`
//! shared by every contract, followed by one block of dimension `N_m ≥ 1` per
//! contract factor. Dynamics are arithmetic Brownian motion with constant
//! drift `μ` and covariance `Σ` per unit time, so over a step `dt` the state
//! moves by `N(μ·dt, Σ·dt)` and the pair `(X⁰, Xᵐ)` has an exact Gaussian
//! transition density.

mod config;

pub use config::ModelConfig;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MeshError, Result};

/// The macro block concatenated with contract block `m` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedState {
    pub m: usize,
    pub values: Vec<f64>,
}

impl ProjectedState {
    pub fn new(m: usize, values: Vec<f64>) -> Self {
        ProjectedState { m, values }
    }
}

/// Which part of the state a sampling step advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Full,
    /// The projected pair `(X⁰, Xᵐ)`, 1-based `m`.
    Contract(usize),
}

/// Per-contract density data for the projected pair.
#[derive(Debug, Clone)]
struct PairDensity {
    /// Lower Cholesky factor of the projected covariance, row-major.
    chol: Vec<f64>,
    log_det_chol: f64,
    /// `C⁻¹ μ` for the projected drift.
    whitened_drift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    macro_dim: usize,
    contract_dims: Vec<usize>,
    offsets: Vec<usize>,
    initial_state: Vec<f64>,
    drift: Vec<f64>,
    covariance: DMatrix<f64>,
    /// `A` with `A·Aᵀ = Σ`, row-major `N×N`.
    sampler: Vec<f64>,
    /// `None` for sampling-only models whose projected covariances are singular.
    pairs: Option<Vec<PairDensity>>,
}

impl ModelSpec {
    /// Builds a model and factorizes every projected covariance. Fails if
    /// any projected pair is not positive definite.
    pub fn new(
        macro_dim: usize,
        contract_dims: Vec<usize>,
        initial_state: Vec<f64>,
        drift: Vec<f64>,
        covariance: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::sampling_only(
            macro_dim,
            contract_dims,
            initial_state,
            drift,
            covariance,
        )?;
        let pairs = (1..=model.num_contract_factors())
            .map(|m| model.factor_pair(m))
            .collect::<Result<Vec<_>>>()?;
        model.pairs = Some(pairs);
        Ok(model)
    }

    /// Builds a model that can simulate but has no transition densities.
    /// Accepts positive semi-definite (including zero) covariances.
    pub fn sampling_only(
        macro_dim: usize,
        contract_dims: Vec<usize>,
        initial_state: Vec<f64>,
        drift: Vec<f64>,
        covariance: Vec<f64>,
    ) -> Result<Self> {
        if contract_dims.is_empty() {
            return Err(MeshError::Config("at least one contract factor is required".into()));
        }
        if let Some(m) = contract_dims.iter().position(|&d| d == 0) {
            return Err(MeshError::Config(format!(
                "contract factor {} has dimension 0",
                m + 1
            )));
        }
        let n = macro_dim + contract_dims.iter().sum::<usize>();
        for (what, len) in [("initial_state", initial_state.len()), ("drift", drift.len())] {
            if len != n {
                return Err(MeshError::Config(format!(
                    "{what} has length {len}, expected {n}"
                )));
            }
        }
        if covariance.len() != n * n {
            return Err(MeshError::Config(format!(
                "covariance has {} entries, expected {}",
                covariance.len(),
                n * n
            )));
        }
        if initial_state.iter().chain(&drift).chain(&covariance).any(|v| !v.is_finite()) {
            return Err(MeshError::Config("non-finite model parameter".into()));
        }
        let cov = DMatrix::from_row_slice(n, n, &covariance);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(MeshError::Config("covariance is not symmetric".into()));
        }
        let sampler = sampling_factor(&cov)?;
        let mut offsets = Vec::with_capacity(contract_dims.len());
        let mut at = macro_dim;
        for &d in &contract_dims {
            offsets.push(at);
            at += d;
        }
        Ok(ModelSpec {
            macro_dim,
            contract_dims,
            offsets,
            initial_state,
            drift,
            covariance: cov,
            sampler,
            pairs: None,
        })
    }

    /// Standard one-dimensional Brownian motion started at 0.
    pub fn brownian_1d() -> Self {
        Self::new(0, vec![1], vec![0.0], vec![0.0], vec![1.0]).expect("valid model")
    }

    /// Correlated arithmetic Brownian motion: one-dimensional macro factor and
    /// `M` one-dimensional contract factors, each correlated with the macro
    /// factor by `rho[m]` and conditionally independent of each other.
    pub fn one_factor_abm(
        macro_vol: f64,
        macro_drift: f64,
        vols: &[f64],
        drifts: &[f64],
        rho: &[f64],
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        let m = vols.len();
        if drifts.len() != m || rho.len() != m {
            return Err(MeshError::Config("vols, drifts and rho must have equal length".into()));
        }
        let n = m + 1;
        let mut cov = vec![0.0; n * n];
        let mut drift = vec![0.0; n];
        cov[0] = macro_vol * macro_vol;
        drift[0] = macro_drift;
        for j in 0..m {
            let i = j + 1;
            drift[i] = drifts[j];
            cov[i * n + i] = vols[j] * vols[j];
            cov[i * n] = rho[j] * vols[j] * macro_vol;
            cov[i] = cov[i * n];
            for k in 0..j {
                // Independent given the macro factor.
                let c = rho[j] * rho[k] * vols[j] * vols[k];
                cov[i * n + k + 1] = c;
                cov[(k + 1) * n + i] = c;
            }
        }
        Self::new(1, vec![1; m], initial_state, drift, cov)
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        Self::new(
            cfg.macro_dim,
            cfg.contract_dims.clone(),
            cfg.initial_state.clone(),
            cfg.drift.clone(),
            cfg.covariance.clone(),
        )
    }

    pub fn macro_dim(&self) -> usize {
        self.macro_dim
    }

    pub fn contract_dims(&self) -> &[usize] {
        &self.contract_dims
    }

    /// `M`, the number of contract factors.
    pub fn num_contract_factors(&self) -> usize {
        self.contract_dims.len()
    }

    /// `N = N₀ + Σ N_m`.
    pub fn total_dim(&self) -> usize {
        self.initial_state.len()
    }

    /// `Ñ_m = N₀ + N_m`.
    pub fn projected_dim(&self, m: usize) -> Result<usize> {
        self.check_factor(m)?;
        Ok(self.macro_dim + self.contract_dims[m - 1])
    }

    /// `Ñ = max_m Ñ_m`.
    pub fn max_projected_dim(&self) -> usize {
        self.macro_dim + self.contract_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn has_densities(&self) -> bool {
        self.pairs.is_some()
    }

    fn check_factor(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.contract_dims.len() {
            return Err(MeshError::FactorIndex {
                index: m,
                max: self.contract_dims.len(),
            });
        }
        Ok(())
    }

    /// State indices making up the projected pair of factor `m`.
    pub fn pair_indices(&self, m: usize) -> Result<Vec<usize>> {
        self.check_factor(m)?;
        let start = self.offsets[m - 1];
        Ok((0..self.macro_dim)
            .chain(start..start + self.contract_dims[m - 1])
            .collect())
    }

    /// `π_m(state)`.
    pub fn project(&self, state: &[f64], m: usize) -> Result<ProjectedState> {
        let mut values = vec![0.0; self.projected_dim(m)?];
        self.project_into(state, m, &mut values)?;
        Ok(ProjectedState { m, values })
    }

    pub(crate) fn project_into(&self, state: &[f64], m: usize, out: &mut [f64]) -> Result<()> {
        self.check_factor(m)?;
        if state.len() != self.total_dim() {
            return Err(MeshError::Dimension {
                expected: self.total_dim(),
                got: state.len(),
            });
        }
        let start = self.offsets[m - 1];
        let nm = self.contract_dims[m - 1];
        out[..self.macro_dim].copy_from_slice(&state[..self.macro_dim]);
        out[self.macro_dim..self.macro_dim + nm].copy_from_slice(&state[start..start + nm]);
        Ok(())
    }

    fn factor_pair(&self, m: usize) -> Result<PairDensity> {
        let idx = self.pair_indices(m)?;
        let d = idx.len();
        let sub = DMatrix::from_fn(d, d, |i, j| self.covariance[(idx[i], idx[j])]);
        let chol = sub
            .cholesky()
            .ok_or(MeshError::NotPositiveDefinite { block: m })?;
        let l = chol.l();
        if (0..d).any(|i| !(l[(i, i)] > 0.0)) {
            return Err(MeshError::NotPositiveDefinite { block: m });
        }
        let log_det_chol = (0..d).map(|i| l[(i, i)].ln()).sum();
        let mu = DVector::from_iterator(d, idx.iter().map(|&i| self.drift[i]));
        let whitened_drift = l
            .solve_lower_triangular(&mu)
            .ok_or(MeshError::NotPositiveDefinite { block: m })?;
        let mut rows = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                rows.push(l[(i, j)]);
            }
        }
        Ok(PairDensity {
            chol: rows,
            log_det_chol,
            whitened_drift: whitened_drift.iter().copied().collect(),
        })
    }

    fn pair(&self, m: usize) -> Result<&PairDensity> {
        self.check_factor(m)?;
        self.pairs
            .as_ref()
            .map(|p| &p[m - 1])
            .ok_or(MeshError::NoDensity(m))
    }

    /// Writes `C_m⁻¹ x` for a projected vector `x`.
    pub(crate) fn whiten_into(&self, m: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.pair(m)?;
        let d = x.len();
        for i in 0..d {
            let mut s = x[i];
            for j in 0..i {
                s -= p.chol[i * d + j] * out[j];
            }
            out[i] = s / p.chol[i * d + i];
        }
        Ok(())
    }

    /// `C_m⁻¹ μ_m`.
    pub(crate) fn whitened_drift(&self, m: usize) -> Result<&[f64]> {
        Ok(&self.pair(m)?.whitened_drift)
    }

    /// `-(Ñ_m/2)·ln(2π·dt) - ln det C_m`, the log normalizer at step `dt`.
    pub(crate) fn log_normalizer(&self, m: usize, dt: f64) -> Result<f64> {
        let p = self.pair(m)?;
        let d = p.whitened_drift.len() as f64;
        Ok(-0.5 * d * (2.0 * std::f64::consts::PI * dt).ln() - p.log_det_chol)
    }

    /// Log of the transition density of the projected pair over `dt`.
    pub fn log_transition_density(
        &self,
        m: usize,
        dt: f64,
        from: &ProjectedState,
        to: &ProjectedState,
    ) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(MeshError::NonPositiveStep(dt));
        }
        let d = self.projected_dim(m)?;
        for s in [from, to] {
            if s.m != m {
                return Err(MeshError::FactorIndex { index: s.m, max: m });
            }
            if s.values.len() != d {
                return Err(MeshError::Dimension {
                    expected: d,
                    got: s.values.len(),
                });
            }
        }
        let mut zx = vec![0.0; d];
        let mut zy = vec![0.0; d];
        self.whiten_into(m, &from.values, &mut zx)?;
        self.whiten_into(m, &to.values, &mut zy)?;
        let nu = self.whitened_drift(m)?;
        let sq: f64 = (0..d)
            .map(|i| {
                let r = zy[i] - (zx[i] + nu[i] * dt);
                r * r
            })
            .sum();
        Ok(self.log_normalizer(m, dt)? - sq * (0.5 / dt))
    }

    /// `p⁽ᵐ⁾(dt, from, to)`.
    pub fn transition_density(
        &self,
        m: usize,
        dt: f64,
        from: &ProjectedState,
        to: &ProjectedState,
    ) -> Result<f64> {
        Ok(self.log_transition_density(m, dt, from, to)?.exp())
    }

    /// Draws the exact-law state after `dt`. `Block::Contract(m)` advances a
    /// projected pair; `Block::Full` a full state.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        block: Block,
        dt: f64,
        from: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut out = from.to_vec();
        match block {
            Block::Full => {
                if from.len() != self.total_dim() {
                    return Err(MeshError::Dimension {
                        expected: self.total_dim(),
                        got: from.len(),
                    });
                }
                let mut z = vec![0.0; from.len()];
                self.step_full_in_place(dt, &mut out, &mut z, rng)?;
            }
            Block::Contract(m) => {
                let idx = self.pair_indices(m)?;
                if from.len() != idx.len() {
                    return Err(MeshError::Dimension {
                        expected: idx.len(),
                        got: from.len(),
                    });
                }
                if !(dt > 0.0) {
                    return Err(MeshError::NonPositiveStep(dt));
                }
                let p = self.pair(m)?;
                let d = idx.len();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let sq = dt.sqrt();
                for i in 0..d {
                    let shock: f64 = (0..=i).map(|j| p.chol[i * d + j] * z[j]).sum();
                    out[i] += self.drift[idx[i]] * dt + sq * shock;
                }
            }
        }
        Ok(out)
    }

    /// In-place full-state step; `scratch` must have length `N`.
    pub(crate) fn step_full_in_place<R: Rng + ?Sized>(
        &self,
        dt: f64,
        state: &mut [f64],
        scratch: &mut [f64],
        rng: &mut R,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(MeshError::NonPositiveStep(dt));
        }
        let n = state.len();
        for z in scratch.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let sq = dt.sqrt();
        for i in 0..n {
            let row = &self.sampler[i * n..(i + 1) * n];
            let shock: f64 = row.iter().zip(scratch.iter()).map(|(a, z)| a * z).sum();
            state[i] += self.drift[i] * dt + sq * shock;
        }
        Ok(())
    }
}

/// `A` with `A·Aᵀ = Σ`: Cholesky when positive definite, otherwise a
/// symmetric eigendecomposition with the (tiny) negative spectrum clipped.
fn sampling_factor(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = cov.nrows();
    let a = match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = cov.clone().symmetric_eigen();
            let tol = 1e-12 * cov.amax().max(1.0);
            if eig.eigenvalues.iter().any(|&l| l < -tol) {
                return Err(MeshError::Config(
                    "covariance is not positive semi-definite".into(),
                ));
            }
            let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            &eig.eigenvectors * sqrt_l
        }
    };
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rows.push(a[(i, j)]);
        }
    }
    Ok(rows)
}
