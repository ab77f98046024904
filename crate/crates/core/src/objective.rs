//! Clipped surrogate objective for the GRPO family.
//!
//! For a batch of rollouts with per-token advantages A[i][t] and trust-region
//! ratios `w = exp(log pi_theta - log pi_old)` the objective is
//!
//! ```text
//! J = (1/N) sum_i (1/T_i) sum_t min(w*A, clip(w, 1-eps_low, 1+eps_high)*A)
//!     - beta * KL(pi_theta || pi_ref)
//! ```
//!
//! where the KL penalty (when enabled) is the per-token forward KL between
//! the full current and reference distributions, averaged with the same
//! (1/N, 1/T_i) weights as the surrogate term. GRPO is the special case of
//! uniform token advantages and a symmetric clip band.

use serde::{Deserialize, Serialize};

use crate::policy::{forward_distributions, PolicyParams};
use crate::tasks::PromptEncoding;
use crate::weighting::NormalizationStrategy;
use crate::{Error, Result};

/// Algorithm preset: selects the weighting strategy and filtering defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Grpo,
    Gcpo,
    Dapo,
    VppoLike,
}

impl Algorithm {
    /// Token-weighting strategy the preset implies. `topk_fraction` feeds the
    /// VPPO-like hard filter; `configured` is the user's explicit choice for
    /// GCPO.
    pub fn weighting(
        &self,
        configured: Option<NormalizationStrategy>,
        topk_fraction: f64,
    ) -> NormalizationStrategy {
        match self {
            Algorithm::Gcpo => configured.unwrap_or(NormalizationStrategy::Histogram),
            Algorithm::VppoLike => NormalizationStrategy::HardTopk {
                fraction: topk_fraction,
            },
            Algorithm::Grpo | Algorithm::Dapo => NormalizationStrategy::Uniform,
        }
    }

    /// Whether zero-variance groups are dropped by default.
    pub fn filters_by_default(&self) -> bool {
        matches!(self, Algorithm::Dapo)
    }

    /// Default upper clip offset; DAPO clips asymmetrically.
    pub fn default_clip_high(&self, clip_low: f64) -> f64 {
        match self {
            Algorithm::Dapo => 0.28,
            _ => clip_low,
        }
    }
}

/// Clip band, KL weight, and algorithm preset for one surrogate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_beta: f64,
    pub algorithm: Algorithm,
}

impl ObjectiveConfig {
    pub fn new(clip_low: f64, clip_high: f64, kl_beta: f64, algorithm: Algorithm) -> Result<Self> {
        let cfg = ObjectiveConfig {
            clip_low,
            clip_high,
            kl_beta,
            algorithm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn symmetric(epsilon: f64, kl_beta: f64, algorithm: Algorithm) -> Result<Self> {
        Self::new(epsilon, epsilon, kl_beta, algorithm)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eps) in [("clip_low", self.clip_low), ("clip_high", self.clip_high)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::invalid(format!(
                    "{name} must lie in (0, 1), got {eps}"
                )));
            }
        }
        if self.kl_beta < 0.0 || !self.kl_beta.is_finite() {
            return Err(Error::invalid(format!(
                "kl_beta must be >= 0, got {}",
                self.kl_beta
            )));
        }
        Ok(())
    }
}

/// One rollout's worth of surrogate inputs, borrowed from the caller.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateEntry<'a> {
    pub prompt: &'a PromptEncoding,
    pub response: &'a [usize],
    /// Log-probs forming the ratio denominator (the behavior policy).
    pub behavior_log_probs: &'a [f64],
    pub token_advantages: &'a [f64],
}

impl SurrogateEntry<'_> {
    pub fn check_shapes(&self) -> Result<()> {
        if self.response.is_empty() {
            return Err(Error::invalid("surrogate entry has empty response"));
        }
        if self.behavior_log_probs.len() != self.response.len()
            || self.token_advantages.len() != self.response.len()
        {
            return Err(Error::invalid(format!(
                "surrogate entry shape mismatch: response {}, behavior {}, advantages {}",
                self.response.len(),
                self.behavior_log_probs.len(),
                self.token_advantages.len()
            )));
        }
        Ok(())
    }
}

/// Objective value plus the diagnostics the trainer logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateReport {
    pub value: f64,
    /// Fraction of tokens where the clipped branch was strictly selected.
    pub clip_fraction: f64,
    /// The (unweighted-by-beta) KL penalty term; 0 when disabled.
    pub kl_penalty: f64,
    pub token_count: usize,
}

/// The clipped surrogate objective value for a batch.
///
/// `reference` supplies the KL-penalty distributions and is required iff
/// `cfg.kl_beta > 0`.
pub fn surrogate_value(
    params: &PolicyParams,
    batch: &[SurrogateEntry<'_>],
    reference: Option<&PolicyParams>,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    Ok(surrogate_report(params, batch, reference, cfg)?.value)
}

pub fn surrogate_report(
    params: &PolicyParams,
    batch: &[SurrogateEntry<'_>],
    reference: Option<&PolicyParams>,
    cfg: &ObjectiveConfig,
) -> Result<SurrogateReport> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty surrogate batch"));
    }
    if cfg.kl_beta > 0.0 && reference.is_none() {
        return Err(Error::invalid("kl_beta > 0 requires reference parameters"));
    }
    for entry in batch {
        entry.check_shapes()?;
    }

    let n = batch.len() as f64;
    let lo = 1.0 - cfg.clip_low;
    let hi = 1.0 + cfg.clip_high;

    // Reduction order contract: per-rollout partial sums accumulated in
    // batch order, KL penalty applied per position. The analytic gradient
    // path reproduces the same association, so the two value routes agree
    // bit for bit.
    let mut value = 0.0;
    let mut kl_penalty = 0.0;
    let mut clipped_selected = 0usize;
    let mut token_count = 0usize;

    for entry in batch {
        let dists = forward_distributions(params, entry.prompt, entry.response)?;
        let ref_dists = match reference {
            Some(r) if cfg.kl_beta > 0.0 => {
                Some(forward_distributions(r, entry.prompt, entry.response)?)
            }
            _ => None,
        };
        let t_len = entry.response.len();
        let coef = 1.0 / (n * t_len as f64);
        token_count += t_len;
        let mut entry_value = 0.0;
        for t in 0..t_len {
            let y = entry.response[t];
            let w = (dists[t].log_prob(y) - entry.behavior_log_probs[t]).exp();
            let adv = entry.token_advantages[t];
            let term_unclipped = w * adv;
            let term_clipped = w.clamp(lo, hi) * adv;
            if term_unclipped <= term_clipped {
                entry_value += coef * term_unclipped;
            } else {
                entry_value += coef * term_clipped;
                clipped_selected += 1;
            }
            if let Some(refs) = &ref_dists {
                let kl = crate::numerics::kl_divergence(&dists[t], &refs[t])?;
                entry_value -= cfg.kl_beta * coef * kl;
                kl_penalty += coef * kl;
            }
        }
        value += entry_value;
    }

    Ok(SurrogateReport {
        value,
        clip_fraction: clipped_selected as f64 / token_count.max(1) as f64,
        kl_penalty,
        token_count,
    })
}
