//! Per-token contrastive guidance.
//!
//! A fixed sampled sequence is scored twice, once under the positive prompt
//! and once under the negative prompt, and each position's divergence
//! between the two predicted distributions becomes that token's raw guidance
//! score. The scores are independent of how the sequence was sampled (the
//! rollout's behavior log-probs are never read here).

use serde::{Deserialize, Serialize};

use crate::numerics::kl_divergence;
use crate::policy::{forward_distributions, PolicyParams, Rollout};
use crate::tasks::PromptEncoding;
use crate::{Error, Result};

/// Divergence scored at each position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMetric {
    /// Full-vocabulary forward KL of positive vs negative prediction.
    Kl,
    /// Signed log-ratio at the sampled token:
    /// `log pi(y_t | x) - log pi(y_t | x-)`.
    InfoGain,
    /// `|log pi(y_t | x) - log pi(y_t | x-)|`.
    AbsDiff,
}

/// Raw and normalized guidance scores for one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceProfile {
    pub metric: DivergenceMetric,
    pub eta_raw: Vec<f64>,
    /// Filled by the weighting stage; entries in [0, 1] once present.
    pub eta_norm: Option<Vec<f64>>,
}

impl GuidanceProfile {
    pub fn len(&self) -> usize {
        self.eta_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta_raw.is_empty()
    }
}

/// Scores `rollout.response` under both prompts with the given params.
///
/// Both prompts must come from the same task family; the same fixed sequence
/// is teacher-forced through the network twice.
pub fn score_guidance(
    params: &PolicyParams,
    positive: &PromptEncoding,
    negative: &PromptEncoding,
    rollout: &Rollout,
    metric: DivergenceMetric,
) -> Result<GuidanceProfile> {
    if positive.task != negative.task {
        return Err(Error::invalid(format!(
            "prompt pair mixes task families: {:?} vs {:?}",
            positive.task, negative.task
        )));
    }
    if rollout.response.is_empty() {
        return Err(Error::invalid("cannot score an empty rollout"));
    }
    let pos = forward_distributions(params, positive, &rollout.response)?;
    let neg = forward_distributions(params, negative, &rollout.response)?;

    let mut eta_raw = Vec::with_capacity(rollout.response.len());
    for (t, &y) in rollout.response.iter().enumerate() {
        let eta = match metric {
            DivergenceMetric::Kl => kl_divergence(&pos[t], &neg[t])?,
            DivergenceMetric::InfoGain => pos[t].log_prob(y) - neg[t].log_prob(y),
            DivergenceMetric::AbsDiff => (pos[t].log_prob(y) - neg[t].log_prob(y)).abs(),
        };
        eta_raw.push(eta);
    }
    Ok(GuidanceProfile {
        metric,
        eta_raw,
        eta_norm: None,
    })
}

/// Explicit joint distribution over {correct, incorrect} x responses given
/// one prompt. Row 0 is "correct", row 1 is "incorrect".
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessJoint {
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

impl CorrectnessJoint {
    pub fn new(correct: Vec<f64>, incorrect: Vec<f64>) -> Result<Self> {
        if correct.len() != incorrect.len() || correct.is_empty() {
            return Err(Error::invalid("joint rows must be non-empty, equal length"));
        }
        if correct
            .iter()
            .chain(&incorrect)
            .any(|&p| !(p > 0.0) || !p.is_finite())
        {
            return Err(Error::invalid("joint has a zero or non-finite cell"));
        }
        let total: f64 = correct.iter().chain(&incorrect).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "joint not normalized: total {total}"
            )));
        }
        Ok(CorrectnessJoint { correct, incorrect })
    }
}

/// Verifies the odds identity linking conditional likelihood ratios to an
/// implicit correctness classifier:
///
/// ```text
/// pi(y | x, correct)     P(correct | x, y)     P(incorrect | x)
/// ------------------- =  ------------------- * -----------------
/// pi(y | x, incorrect)   P(incorrect | x, y)   P(correct | x)
/// ```
///
/// Both sides are evaluated for every response from the explicit joint and
/// the maximum absolute violation is returned.
pub fn bayes_odds_identity_check(joint: &CorrectnessJoint) -> Result<f64> {
    let p_correct: f64 = joint.correct.iter().sum();
    let p_incorrect: f64 = joint.incorrect.iter().sum();

    let mut max_violation: f64 = 0.0;
    for (jc, ji) in joint.correct.iter().zip(&joint.incorrect) {
        // Likelihood route.
        let lhs = (jc / p_correct) / (ji / p_incorrect);
        // Posterior-odds route through P(. | x, y).
        let p_y = jc + ji;
        let rhs = ((jc / p_y) / (ji / p_y)) * (p_incorrect / p_correct);
        max_violation = max_violation.max((lhs - rhs).abs());
    }
    Ok(max_violation)
}

/// Writes a profile as CSV rows `position,eta_raw,eta_norm` (empty norm
/// column when the profile is unnormalized).
pub fn write_profile_csv<W: std::io::Write>(mut w: W, profile: &GuidanceProfile) -> Result<()> {
    writeln!(w, "position,eta_raw,eta_norm")?;
    for (t, &raw) in profile.eta_raw.iter().enumerate() {
        match &profile.eta_norm {
            Some(norm) => writeln!(w, "{t},{raw},{}", norm[t])?,
            None => writeln!(w, "{t},{raw},")?,
        }
    }
    Ok(())
}

/// Writes normalized weights as an 8-bit binary PGM, scaling [0, 1] values
/// linearly to [0, 255]. `values.len()` must equal `width * height`.
pub fn write_pgm<W: std::io::Write>(
    mut w: W,
    values: &[f64],
    width: usize,
    height: usize,
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::invalid(format!(
            "pgm expects {} values, got {}",
            width * height,
            values.len()
        )));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("pgm values must lie in [0, 1]"));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values.iter().map(|v| (v * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}
