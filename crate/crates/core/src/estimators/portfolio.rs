use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};
use crate::models::ModelSpec;
use crate::paths::Partition;

/// Discounted payoff of one contract, a function of the projected pair
/// `(X⁰(T_k), Xᵐ(T_k))`. Discounting is folded into the payoff.
#[derive(Clone)]
pub enum Payoff {
    /// `w·x + offset`
    Linear { weights: Vec<f64>, offset: f64 },
    /// `max(w·x - strike, 0)`
    Call { weights: Vec<f64>, strike: f64 },
    /// `max(strike - w·x, 0)`
    Put { weights: Vec<f64>, strike: f64 },
    Custom {
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        lipschitz: f64,
    },
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Linear { weights, offset } => write!(f, "Linear({weights:?}, {offset})"),
            Payoff::Call { weights, strike } => write!(f, "Call({weights:?}, {strike})"),
            Payoff::Put { weights, strike } => write!(f, "Put({weights:?}, {strike})"),
            Payoff::Custom { lipschitz, .. } => write!(f, "Custom(lip = {lipschitz})"),
        }
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl Payoff {
    /// `F(x) = x` on a one-dimensional projected space.
    pub fn identity() -> Self {
        Payoff::Linear {
            weights: vec![1.0],
            offset: 0.0,
        }
    }

    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Self {
        Payoff::Custom {
            f: Arc::new(f),
            lipschitz,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Payoff::Linear { weights, offset } => dot(weights, x) + offset,
            Payoff::Call { weights, strike } => (dot(weights, x) - strike).max(0.0),
            Payoff::Put { weights, strike } => (strike - dot(weights, x)).max(0.0),
            Payoff::Custom { f, .. } => f(x),
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Payoff::Linear { weights, .. }
            | Payoff::Call { weights, .. }
            | Payoff::Put { weights, .. } => weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
            Payoff::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// `κ·F` for `κ > 0`.
    pub fn scaled(&self, kappa: f64) -> Self {
        let sc = |w: &[f64]| w.iter().map(|v| v * kappa).collect::<Vec<_>>();
        match self {
            Payoff::Linear { weights, offset } => Payoff::Linear {
                weights: sc(weights),
                offset: offset * kappa,
            },
            Payoff::Call { weights, strike } => Payoff::Call {
                weights: sc(weights),
                strike: strike * kappa,
            },
            Payoff::Put { weights, strike } => Payoff::Put {
                weights: sc(weights),
                strike: strike * kappa,
            },
            Payoff::Custom { f, lipschitz } => {
                let f = Arc::clone(f);
                Payoff::Custom {
                    f: Arc::new(move |x| kappa * f(x)),
                    lipschitz: lipschitz * kappa,
                }
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Payoff::Linear { weights, .. }
            | Payoff::Call { weights, .. }
            | Payoff::Put { weights, .. } => Some(weights.len()),
            Payoff::Custom { .. } => None,
        }
    }
}

/// Contract `(m, k)`: 1-based factor index and 1-based maturity index.
#[derive(Debug, Clone)]
pub struct Contract {
    pub factor: usize,
    pub maturity: usize,
    pub payoff: Payoff,
}

impl Contract {
    pub fn new(factor: usize, maturity: usize, payoff: Payoff) -> Self {
        Contract {
            factor,
            maturity,
            payoff,
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.payoff.lipschitz_bound()
    }
}

#[derive(Debug, Clone)]
pub struct Portfolio {
    pub contracts: Vec<Contract>,
    pub maturities: Vec<f64>,
}

impl Portfolio {
    pub fn new(contracts: Vec<Contract>, maturities: Vec<f64>) -> Self {
        Portfolio {
            contracts,
            maturities,
        }
    }

    /// Checks factor and maturity indices, payoff dimensions and that the
    /// partition carries the same maturities.
    pub fn validate(&self, model: &ModelSpec, partition: &Partition) -> Result<()> {
        if partition.maturities() != self.maturities.as_slice() {
            return Err(MeshError::Config(
                "partition maturities differ from portfolio maturities".into(),
            ));
        }
        for c in &self.contracts {
            let d = model.projected_dim(c.factor)?;
            partition.maturity(c.maturity)?;
            if let Some(pd) = c.payoff.dim() {
                if pd != d {
                    return Err(MeshError::Dimension { expected: d, got: pd });
                }
            }
        }
        Ok(())
    }

    pub fn scaled(&self, kappa: f64) -> Self {
        Portfolio {
            contracts: self
                .contracts
                .iter()
                .map(|c| Contract::new(c.factor, c.maturity, c.payoff.scaled(kappa)))
                .collect(),
            maturities: self.maturities.clone(),
        }
    }

    /// Distinct `(m, k)` pairs referenced by the contracts.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.contracts.iter().map(|c| (c.factor, c.maturity)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Serializable payoff description used by portfolio files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PayoffSpec {
    Linear {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    Call { weights: Vec<f64>, strike: f64 },
    Put { weights: Vec<f64>, strike: f64 },
}

impl From<&PayoffSpec> for Payoff {
    fn from(s: &PayoffSpec) -> Self {
        match s.clone() {
            PayoffSpec::Linear { weights, offset } => Payoff::Linear { weights, offset },
            PayoffSpec::Call { weights, strike } => Payoff::Call { weights, strike },
            PayoffSpec::Put { weights, strike } => Payoff::Put { weights, strike },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub factor: usize,
    pub maturity: usize,
    pub payoff: PayoffSpec,
}

/// Portfolio file (TOML):
///
/// ```toml
/// maturities = [0.5, 1.0]
/// [[contract]]
/// factor = 1
/// maturity = 2
/// payoff = { kind = "call", weights = [0.0, 1.0], strike = 0.1 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioConfig {
    pub maturities: Vec<f64>,
    #[serde(rename = "contract", default)]
    pub contracts: Vec<ContractSpec>,
}

impl PortfolioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MeshError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn build(&self) -> Portfolio {
        Portfolio::new(
            self.contracts
                .iter()
                .map(|c| Contract::new(c.factor, c.maturity, Payoff::from(&c.payoff)))
                .collect(),
            self.maturities.clone(),
        )
    }
}

/// The composite weight `g(t, X(t)) = L(t)·λ(t)·exp(-∫λ)` on the full state.
#[derive(Clone)]
pub struct HazardLoss {
    g: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    label: String,
}

impl fmt::Debug for HazardLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HazardLoss({})", self.label)
    }
}

impl HazardLoss {
    /// Callers are responsible for `g >= 0` and the smoothness the error
    /// bounds assume.
    pub fn new(label: impl Into<String>, g: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        HazardLoss {
            g: Arc::new(g),
            label: label.into(),
        }
    }

    /// `g ≡ 1`.
    pub fn unit() -> Self {
        Self::new("unit", |_, _| 1.0)
    }

    pub fn zero() -> Self {
        Self::new("zero", |_, _| 0.0)
    }

    /// Deterministic loss `loss` and constant intensity `λ`:
    /// `g(t) = loss·λ·e^{-λt}`.
    pub fn constant_hazard(loss: f64, intensity: f64) -> Self {
        Self::new(format!("constant-hazard(loss={loss}, lambda={intensity})"), move |t, _| {
            loss * intensity * (-intensity * t).exp()
        })
    }

    pub fn scaled(&self, kappa: f64) -> Self {
        let g = Arc::clone(&self.g);
        HazardLoss {
            g: Arc::new(move |t, x| kappa * g(t, x)),
            label: format!("{kappa}*{}", self.label),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.g)(t, x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}
