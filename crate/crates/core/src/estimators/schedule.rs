use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Which estimator the window schedule is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    C1,
    C2,
}

/// Window width `ε_L = min(C₀·L^{-e}, 0.999·ε₀)`.
///
/// * `C1`: `α₀ = max((1+δ)(Ñ+1)ℓ₀/4, 1)`, `e = (1+δ) / (2(1+α₀))`
/// * `C2`: `α₁ = max((1+δ)(Ñ+1)ℓ₀/2, 1)`, `e = (1+δ) / (2α₁+1)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub delta: f64,
    pub c0: f64,
    pub ell0: u32,
    pub n_tilde: usize,
    pub variant: Variant,
}

/// Defaults keep `ε_L` below one hundredth for every `L >= 2`.
pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_C0: f64 = 0.01;

impl EpsilonSchedule {
    pub fn new(variant: Variant, delta: f64, c0: f64, ell0: u32, n_tilde: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(param("delta", format!("must lie in (0, 1), got {delta}")));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(param("c0", format!("must be positive, got {c0}")));
        }
        if ell0 < 1 {
            return Err(param("ell0", "must be at least 1"));
        }
        if n_tilde < 1 {
            return Err(param("n_tilde", "must be at least 1"));
        }
        Ok(EpsilonSchedule {
            delta,
            c0,
            ell0,
            n_tilde,
            variant,
        })
    }

    pub fn with_defaults(variant: Variant, n_tilde: usize) -> Self {
        Self::new(variant, DEFAULT_DELTA, DEFAULT_C0, 1, n_tilde).expect("valid defaults")
    }

    /// `α₀` for `C1`, `α₁` for `C2`.
    pub fn alpha(&self) -> f64 {
        let base = (1.0 + self.delta) * (self.n_tilde as f64 + 1.0) * self.ell0 as f64;
        match self.variant {
            Variant::C1 => (base / 4.0).max(1.0),
            Variant::C2 => (base / 2.0).max(1.0),
        }
    }

    pub fn exponent(&self) -> f64 {
        let a = self.alpha();
        match self.variant {
            Variant::C1 => (1.0 + self.delta) / (2.0 * (1.0 + a)),
            Variant::C2 => (1.0 + self.delta) / (2.0 * a + 1.0),
        }
    }

    pub fn epsilon_for(&self, l: usize, eps0: f64) -> f64 {
        let l = l.max(1) as f64;
        (self.c0 * l.powf(-self.exponent())).min(0.999 * eps0)
    }

    pub fn for_variant(&self, variant: Variant) -> Self {
        EpsilonSchedule { variant, ..*self }
    }
}
