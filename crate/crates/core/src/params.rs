//! Model parameters and the derived growth/extinction constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates and speeds of the branching model.
///
/// `kappa` and `dim` only matter for the spatial (KPP) extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Splitting rate.
    pub beta: f64,
    /// Death rate.
    #[serde(default)]
    pub mu: f64,
    /// Linear mass growth speed.
    pub v: f64,
    /// Diffusion coefficient (generator `kappa * Laplacian`).
    #[serde(default)]
    pub kappa: f64,
    /// Spatial dimension.
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    1
}

impl ModelParams {
    pub fn new(beta: f64, mu: f64, v: f64) -> Self {
        Self {
            beta,
            mu,
            v,
            kappa: 0.0,
            dim: 1,
        }
    }

    pub fn with_diffusion(mut self, kappa: f64, dim: usize) -> Self {
        self.kappa = kappa;
        self.dim = dim;
        self
    }

    pub fn validate(&self) -> Result<DerivedParams> {
        validate_params(self)
    }

    /// Malthusian rate `beta - mu` (no validation).
    pub fn delta(&self) -> f64 {
        self.beta - self.mu
    }
}

/// `delta = beta - mu` and `gamma = mu / beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub delta: f64,
    pub gamma: f64,
}

impl DerivedParams {
    /// Builds derived constants directly; used by the closed-form counting laws.
    pub fn new(delta: f64, gamma: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        Ok(Self { delta, gamma })
    }
}

pub fn validate_params(p: &ModelParams) -> Result<DerivedParams> {
    if !(p.beta > 0.0) || !p.beta.is_finite() {
        return Err(Error::NonpositiveRate {
            name: "beta",
            value: p.beta,
        });
    }
    if !(p.v > 0.0) || !p.v.is_finite() {
        return Err(Error::NonpositiveRate {
            name: "v",
            value: p.v,
        });
    }
    if !(p.mu >= 0.0) || !p.mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "death rate mu must be nonnegative, got {}",
            p.mu
        )));
    }
    if p.beta <= p.mu {
        return Err(Error::SubcriticalOrCritical {
            beta: p.beta,
            mu: p.mu,
        });
    }
    if !(p.kappa >= 0.0) || !p.kappa.is_finite() {
        return Err(Error::NegativeDiffusion(p.kappa));
    }
    if p.dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    Ok(DerivedParams {
        delta: p.beta - p.mu,
        gamma: p.mu / p.beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_birth() {
        let d = validate_params(&ModelParams::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(d.delta, 1.0);
        assert_eq!(d.gamma, 0.0);
    }

    #[test]
    fn with_death() {
        let d = validate_params(&ModelParams::new(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(d.delta, 1.0);
        assert_eq!(d.gamma, 0.5);
    }

    #[test]
    fn critical_rejected() {
        let err = validate_params(&ModelParams::new(1.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SubcriticalOrCritical { .. }));
        let err = validate_params(&ModelParams::new(1.0, 2.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SubcriticalOrCritical { .. }));
    }

    #[test]
    fn nonpositive_rates() {
        assert!(matches!(
            validate_params(&ModelParams::new(0.0, 0.0, 1.0)),
            Err(Error::NonpositiveRate { name: "beta", .. })
        ));
        assert!(matches!(
            validate_params(&ModelParams::new(1.0, 0.0, 0.0)),
            Err(Error::NonpositiveRate { name: "v", .. })
        ));
    }

    #[test]
    fn negative_diffusion() {
        let p = ModelParams::new(1.0, 0.0, 1.0).with_diffusion(-1.0, 1);
        assert_eq!(validate_params(&p), Err(Error::NegativeDiffusion(-1.0)));
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let ok: ModelParams = serde_json::from_str(r#"{"beta":1,"v":1}"#).unwrap();
        assert_eq!(ok.mu, 0.0);
        assert_eq!(ok.dim, 1);
        assert!(serde_json::from_str::<ModelParams>(r#"{"beta":1,"v":1,"nu":2}"#).is_err());
    }
}
