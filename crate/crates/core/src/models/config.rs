use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};

/// Flat key-value model description, read from TOML.
///
/// ```toml
/// macro_dim = 1
/// contract_dims = [1, 1]
/// initial_state = [0.0, 0.0, 0.0]
/// drift = [0.0, 0.0, 0.0]
/// # row-major N×N, per unit time
/// covariance = [1.0, 0.3, 0.3,
///               0.3, 1.0, 0.09,
///               0.3, 0.09, 1.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub macro_dim: usize,
    pub contract_dims: Vec<usize>,
    pub initial_state: Vec<f64>,
    pub drift: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MeshError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    #[test]
    fn parses_and_builds() {
        let cfg = ModelConfig::parse(
            "macro_dim = 1\ncontract_dims = [1]\ninitial_state = [0.0, 1.0]\n\
             drift = [0.0, 0.1]\ncovariance = [1.0, 0.5, 0.5, 2.0]\n",
        )
        .unwrap();
        let m = ModelSpec::from_config(&cfg).unwrap();
        assert_eq!(m.total_dim(), 2);
        assert_eq!(m.initial_state(), &[0.0, 1.0]);
    }

    #[test]
    fn macro_dim_defaults_to_zero() {
        let cfg = ModelConfig::parse(
            "contract_dims = [1]\ninitial_state = [0.0]\ndrift = [0.0]\ncovariance = [1.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.macro_dim, 0);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = ModelConfig::parse(
            "contract_dims = [1]\ninitial_state = [0.0]\ndrift = [0.0]\ncovariance = [1.0]\nvol = 2\n",
        );
        assert!(matches!(err, Err(MeshError::Config(_))));
    }
}
