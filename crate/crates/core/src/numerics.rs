//! Numerically stable categorical-distribution kernels.
//!
//! All probabilities are stored and combined in natural-log space; every
//! distribution produced by [`log_softmax`] is strictly positive, so no
//! `0 * log 0` convention is needed anywhere downstream.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unnormalized log-scores over the vocabulary at one sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Requires at least two finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "logit vector needs length >= 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("logit vector has non-finite entry"));
        }
        Ok(LogitVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A normalized categorical distribution in log space.
///
/// Invariant: `logsumexp(log_probs) == 0` within 1e-9 and every entry <= 0.
/// Construction goes through [`log_softmax`] or [`TokenDistribution::from_log_probs`],
/// both of which enforce this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    log_probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates normalization before wrapping.
    pub fn from_log_probs(log_probs: Vec<f64>) -> Result<Self> {
        if log_probs.len() < 2 {
            return Err(Error::invalid("distribution needs length >= 2"));
        }
        let lse = logsumexp(&log_probs)?;
        if lse.abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "log-probs not normalized: logsumexp = {lse:e}"
            )));
        }
        if log_probs.iter().any(|&lp| lp > 0.0) {
            return Err(Error::invalid("log-prob entry > 0"));
        }
        Ok(TokenDistribution { log_probs })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::invalid("distribution needs length >= 2"));
        }
        let lp = -(len as f64).ln();
        Ok(TokenDistribution {
            log_probs: vec![lp; len],
        })
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self, token: usize) -> f64 {
        self.log_probs[token]
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.log_probs[token].exp()
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

/// Max-shifted stable log-sum-exp. Errors on empty input.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("logsumexp of empty vector"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("logsumexp input has non-finite entry"));
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Normalizes logits into a log-space categorical distribution.
///
/// Shift-invariant: `log_softmax(l + c) == log_softmax(l)` for any scalar c.
pub fn log_softmax(logits: &LogitVector) -> TokenDistribution {
    // LogitVector guarantees finite entries and length >= 2.
    let lse = logsumexp(logits.values()).expect("validated logits");
    let log_probs = logits.values().iter().map(|l| l - lse).collect();
    TokenDistribution { log_probs }
}

/// Exact forward KL divergence `sum_v p_v (log p_v - log q_v)`.
///
/// Computed in log space; both inputs are already-validated distributions so
/// the result is >= 0 up to rounding and exactly 0 when `p == q` entrywise.
pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "kl_divergence length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let kl = p
        .log_probs()
        .iter()
        .zip(q.log_probs())
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum();
    Ok(kl)
}
