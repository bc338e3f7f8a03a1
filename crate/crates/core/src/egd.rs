//! Exponentiated gradient descent on the simplex.
//!
//! `p'_j ∝ p_j exp(η Σ_i b_i A_ij)`, computed in log space so large `η·A`
//! cannot overflow.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, InteractionMatrix, MixtureProportions, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgdConfig {
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl EgdConfig {
    pub fn new(eta: f64, gamma: Option<f64>) -> Result<Self> {
        check_eta(eta)?;
        if let Some(g) = gamma {
            check_gamma(g)?;
        }
        Ok(Self { eta, gamma })
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidStepSize(eta));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    Ok(())
}

/// Multiplicative update of `p` by per-group scores: `p'_j ∝ p_j exp(η s_j)`.
///
/// Zero entries of `p` stay zero.
pub fn egd_step_scores(p: &MixtureProportions, scores: &[f64], eta: f64) -> Result<MixtureProportions> {
    check_eta(eta)?;
    if scores.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("EGD scores"));
    }
    let logits: Vec<f64> = p
        .iter()
        .zip(scores)
        .map(|(&w, &s)| if w > 0.0 { libm::log(w) + eta * s } else { f64::NEG_INFINITY })
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::ZeroMass);
    }
    let unnorm: Vec<f64> = logits.iter().map(|&l| libm::exp(l - top)).collect();
    let z: f64 = unnorm.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::ZeroMass);
    }
    MixtureProportions::new(unnorm.into_iter().map(|u| u / z).collect())
}

/// One EGD step for the linear dynamic law with parameters `(A, b)`.
pub fn egd_step(p: &MixtureProportions, a: &InteractionMatrix, b: &[f64], eta: f64) -> Result<MixtureProportions> {
    if a.dim() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: a.dim() });
    }
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.len() });
    }
    egd_step_scores(p, &a.weighted_column_sums(Some(b)), eta)
}

/// `A / ‖A‖_F`.
pub fn normalize_interaction(a: &InteractionMatrix) -> Result<InteractionMatrix> {
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(a.scaled(1.0 / norm))
}

/// `v / ‖v‖_2` for out-of-domain parameter vectors.
pub fn normalize_vector(v: &[f64]) -> Result<Vec<f64>> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// `(1 - γ) Ā + γ A_ema`, or `Ā` on the first call.
pub fn ema_interaction(prev: Option<&InteractionMatrix>, current: &InteractionMatrix, gamma: f64) -> Result<InteractionMatrix> {
    check_gamma(gamma)?;
    match prev {
        None => Ok(current.clone()),
        Some(prev) => current.scaled(1.0 - gamma).add_scaled(prev, gamma),
    }
}

/// Vector form of [`ema_interaction`].
pub fn ema_vector(prev: Option<&[f64]>, current: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    match prev {
        None => Ok(current.to_vec()),
        Some(prev) => {
            if prev.len() != current.len() {
                return Err(Error::DimensionMismatch { expected: current.len(), got: prev.len() });
            }
            Ok(current.iter().zip(prev).map(|(c, p)| (1.0 - gamma) * c + gamma * p).collect())
        }
    }
}
