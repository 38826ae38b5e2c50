//! Sample-complexity policies.
//!
//! A batch of per-sample losses is normalised into `[0, 1]` (either by
//! min-max scaling or by within-batch rank), squashed through the Beta CDF
//! `I_x(s, a)`, and complemented. The complement is the per-sample
//! augmentation factor `f_DA`: hard samples (high loss) get a small factor,
//! easy samples a large one. Its batch mean is the regularization weight
//! `f_CTC` applied to the intermediate CTC term.

mod ibf;

pub use ibf::{ln_beta, ln_gamma, regularized_incomplete_beta, regularized_incomplete_beta_tol};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite loss {value} at batch index {index}")]
    NonFiniteLoss { index: usize, value: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("incomplete beta continued fraction did not converge (x={x}, s={s}, a={a})")]
    NoConvergence { x: f64, s: f64, a: f64 },
}

/// How raw batch losses are mapped into `[0, 1]` before the Beta CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `(L_i − L_min) / (L_max − L_min)`.
    #[default]
    MinMax,
    /// `rank_i / B`, 1-based ascending rank.
    Rank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub s: f64,
    pub a: f64,
    pub mode: Normalization,
    pub ibf_tolerance: f64,
    /// Divide each sample loss by its label length before normalising.
    pub length_normalized: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            s: 0.5,
            a: 5.0,
            mode: Normalization::MinMax,
            ibf_tolerance: 1e-12,
            length_normalized: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.s > 0.0 && self.s.is_finite()) || !(self.a > 0.0 && self.a.is_finite()) {
            return Err(PolicyError::Domain(format!(
                "policy shapes must be positive, got s={}, a={}",
                self.s, self.a
            )));
        }
        if !(self.ibf_tolerance > 0.0 && self.ibf_tolerance <= 1e-6) {
            return Err(PolicyError::Domain(format!(
                "ibf_tolerance must lie in (0, 1e-6], got {}",
                self.ibf_tolerance
            )));
        }
        Ok(())
    }

    pub fn ibf(&self, x: f64) -> Result<f64, PolicyError> {
        regularized_incomplete_beta_tol(x, self.s, self.a, self.ibf_tolerance)
    }
}

/// Result of running the policy over one batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchComplexity {
    pub raw_losses: Vec<f64>,
    /// Normalised losses `x_i`.
    pub normalized: Vec<f64>,
    /// Per-sample augmentation factors `f_DA = 1 − I_{x_i}(s, a)`.
    pub da_factors: Vec<f64>,
    /// Batch regularization factor `f_CTC`, the mean of `da_factors`.
    pub reg_factor: f64,
}

fn check_finite(losses: &[f64]) -> Result<(), PolicyError> {
    if losses.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    match losses.iter().position(|l| !l.is_finite()) {
        Some(index) => Err(PolicyError::NonFiniteLoss {
            index,
            value: losses[index],
        }),
        None => Ok(()),
    }
}

/// Min-max normalisation within the batch.
///
/// A degenerate batch (all losses equal, including `B = 1`) maps every
/// sample to 0.5.
pub fn minmax_normalize(losses: &[f64]) -> Result<Vec<f64>, PolicyError> {
    check_finite(losses)?;
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span == 0.0 {
        return Ok(vec![0.5; losses.len()]);
    }
    Ok(losses
        .iter()
        .map(|&l| ((l - min) / span).clamp(0.0, 1.0))
        .collect())
}

/// Rank normalisation `rank_i / B` with ties broken by input index.
pub fn rank_normalize(losses: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if losses.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    if let Some(index) = losses.iter().position(|l| l.is_nan()) {
        return Err(PolicyError::NonFiniteLoss {
            index,
            value: f64::NAN,
        });
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&i, &j| losses[i].total_cmp(&losses[j]).then(i.cmp(&j)));
    let b = losses.len() as f64;
    let mut out = vec![0.0; losses.len()];
    for (rank0, &i) in order.iter().enumerate() {
        out[i] = (rank0 + 1) as f64 / b;
    }
    Ok(out)
}

/// `1 − I_x(s, a)`.
pub fn da_factor(x: f64, cfg: &PolicyConfig) -> Result<f64, PolicyError> {
    Ok(1.0 - cfg.ibf(x)?)
}

/// Mean of `1 − I_{x_i}(s, a)` over the batch.
pub fn interctc_factor(normalized: &[f64], cfg: &PolicyConfig) -> Result<f64, PolicyError> {
    if normalized.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let factors = normalized
        .iter()
        .map(|&x| da_factor(x, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&factors))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn normalize(losses: &[f64], mode: Normalization) -> Result<Vec<f64>, PolicyError> {
    match mode {
        Normalization::MinMax => minmax_normalize(losses),
        Normalization::Rank => rank_normalize(losses),
    }
}

pub fn compute_batch_complexity(
    raw_losses: &[f64],
    cfg: &PolicyConfig,
) -> Result<BatchComplexity, PolicyError> {
    check_finite(raw_losses)?;
    let normalized = normalize(raw_losses, cfg.mode)?;
    let da_factors = normalized
        .iter()
        .map(|&x| da_factor(x, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let reg_factor = mean(&da_factors);
    Ok(BatchComplexity {
        raw_losses: raw_losses.to_vec(),
        normalized,
        da_factors,
        reg_factor,
    })
}
