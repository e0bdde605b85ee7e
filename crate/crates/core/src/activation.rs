use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Elementwise node activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Logistic,
    Softplus,
    Identity,
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow for large `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Logistic => logistic(z),
            ActivationKind::Softplus => softplus(z),
            ActivationKind::Identity => z,
        }
    }

    /// Value and derivative at `z`, sharing one exponential.
    #[inline]
    pub fn apply_with_derivative(self, z: f64) -> (f64, f64) {
        match self {
            ActivationKind::Logistic => {
                let s = logistic(z);
                (s, s * (1.0 - s))
            }
            ActivationKind::Softplus => {
                let e = (-z.abs()).exp();
                let s = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (z.max(0.0) + e.ln_1p(), s)
            }
            ActivationKind::Identity => (z, 1.0),
        }
    }

    /// Derivative evaluated at the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Logistic => {
                let s = logistic(z);
                s * (1.0 - s)
            }
            ActivationKind::Softplus => logistic(z),
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Logistic => "logistic",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Identity => "identity",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ActivationKind::Logistic),
            "softplus" => Ok(ActivationKind::Softplus),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}
