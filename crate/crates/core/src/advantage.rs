//! Group-relative advantage estimation, per-token advantage scaling, and
//! DAPO-style online sample filtering.

use serde::{Deserialize, Serialize};

use crate::policy::Rollout;
use crate::{Error, Result};

/// Stabilizer added to the group standard deviation so near-zero-variance
/// groups that survive filtering due to float noise do not blow up.
pub const EPS_STD: f64 = 1e-6;

/// How per-sample rewards are turned into advantages within a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageEstimator {
    /// `(r_i - mean) / (std + eps)` with population (1/N) std.
    Grpo,
    /// Mean subtraction only, no standard-deviation scaling.
    DrGrpo,
}

/// N rollouts for one prompt plus their group-normalized advantages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Group {
    pub prompt_id: usize,
    pub rollouts: Vec<Rollout>,
    /// One advantage per rollout; empty until estimated.
    pub sample_advantages: Vec<f64>,
    /// Per-rollout token advantages; `token_advantages[i].len()` equals
    /// rollout i's response length once populated.
    pub token_advantages: Vec<Vec<f64>>,
}

impl Group {
    pub fn new(prompt_id: usize, rollouts: Vec<Rollout>) -> Self {
        Group {
            prompt_id,
            rollouts,
            sample_advantages: Vec::new(),
            token_advantages: Vec::new(),
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }
}

/// Group-relative advantages for one group of rewards.
///
/// Uses [`EPS_STD`] in the denominator for the GRPO estimator; see
/// [`group_advantages_with_eps`] for the raw form.
pub fn group_advantages(rewards: &[f64], estimator: AdvantageEstimator) -> Result<Vec<f64>> {
    group_advantages_with_eps(rewards, estimator, EPS_STD)
}

/// Same as [`group_advantages`] with an explicit std stabilizer, so exact
/// identities (affine invariance, unit variance) can be tested at eps = 0.
pub fn group_advantages_with_eps(
    rewards: &[f64],
    estimator: AdvantageEstimator,
    eps_std: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "group advantage needs N >= 2 rewards, got {n}"
        )));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    Ok(match estimator {
        AdvantageEstimator::DrGrpo => rewards.iter().map(|r| r - mean).collect(),
        AdvantageEstimator::Grpo => {
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
            let denom = var.sqrt() + eps_std;
            rewards.iter().map(|r| (r - mean) / denom).collect()
        }
    })
}

/// Token-level advantages: elementwise `eta_norm[t] * sample_advantage`.
///
/// With a uniform weight vector (all 1) this collapses to plain advantage
/// broadcasting, i.e. the GRPO special case.
pub fn gcpo_token_advantages(sample_adv: f64, eta_norm: &[f64]) -> Result<Vec<f64>> {
    if eta_norm.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
        return Err(Error::invalid("eta_norm entry outside [0, 1]"));
    }
    Ok(eta_norm.iter().map(|w| w * sample_adv).collect())
}

/// Drops groups whose reward vector has zero range (all-correct or
/// all-incorrect), preserving the order of survivors.
pub fn dapo_filter(groups: Vec<Group>) -> Vec<Group> {
    groups
        .into_iter()
        .filter(|g| {
            let rewards = g.rewards();
            let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max > min
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rollout_with_reward(reward: f64) -> Rollout {
        Rollout {
            prompt_id: 0,
            response: vec![1, 0],
            behavior_log_probs: vec![-0.5, -0.5],
            reward,
        }
    }

    fn group_with_rewards(rewards: &[f64]) -> Group {
        Group::new(0, rewards.iter().map(|&r| rollout_with_reward(r)).collect())
    }

    #[test]
    fn grpo_advantages_match_direct_mean_std_oracle() {
        let rewards = [1.0, 0.0, 0.0, 1.0];
        // Oracle: naive mean / population std, same eps.
        let mean = rewards.iter().sum::<f64>() / 4.0;
        let std =
            (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 4.0).sqrt();
        let expected: Vec<f64> = rewards.iter().map(|r| (r - mean) / (std + EPS_STD)).collect();

        let got = group_advantages(&rewards, AdvantageEstimator::Grpo).unwrap();
        assert_eq!(got, expected);
        // mean 0.5, population std 0.5 -> approximately [1, -1, -1, 1].
        for (g, want) in got.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((g - want).abs() < 1e-5);
        }
    }

    #[test]
    fn grpo_all_equal_rewards_give_zero() {
        let got = group_advantages(&[1.0; 4], AdvantageEstimator::Grpo).unwrap();
        assert!(got.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn dr_grpo_is_mean_subtraction() {
        let got = group_advantages(&[1.0, 0.0], AdvantageEstimator::DrGrpo).unwrap();
        assert_eq!(got, vec![0.5, -0.5]);
    }

    #[test]
    fn too_small_group_errors() {
        assert!(group_advantages(&[1.0], AdvantageEstimator::Grpo).is_err());
        assert!(group_advantages(&[], AdvantageEstimator::DrGrpo).is_err());
    }

    #[test]
    fn token_advantages_scale_elementwise() {
        assert_eq!(
            gcpo_token_advantages(1.0, &[0.0, 0.5, 1.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            gcpo_token_advantages(-2.0, &[0.25, 0.75]).unwrap(),
            vec![-0.5, -1.5]
        );
        // Uniform weights broadcast the sample advantage exactly.
        let adv = 0.73;
        assert_eq!(
            gcpo_token_advantages(adv, &[1.0, 1.0, 1.0]).unwrap(),
            vec![adv, adv, adv]
        );
        assert!(gcpo_token_advantages(1.0, &[1.2]).is_err());
        assert!(gcpo_token_advantages(1.0, &[-0.1]).is_err());
    }

    #[test]
    fn dapo_filter_drops_zero_range_groups_only() {
        let groups = vec![
            group_with_rewards(&[1.0, 1.0, 1.0, 1.0]),
            group_with_rewards(&[1.0, 0.0, 1.0, 0.0]),
            group_with_rewards(&[0.0, 0.0, 0.0, 0.0]),
            group_with_rewards(&[0.25, 0.5]),
        ];
        let kept = dapo_filter(groups);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].rewards(), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(kept[1].rewards(), vec![0.25, 0.5]);
    }

    proptest! {
        #[test]
        fn grpo_mean_zero_and_unit_variance(
            rewards in proptest::collection::vec(-10f64..10.0, 2..20),
        ) {
            let spread = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - rewards.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);

            let adv = group_advantages_with_eps(&rewards, AdvantageEstimator::Grpo, 0.0).unwrap();
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            let var = adv.iter().map(|a| a * a).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }

        #[test]
        fn grpo_invariant_under_positive_affine_reward_transform(
            rewards in proptest::collection::vec(-5f64..5.0, 2..12),
            scale in 0.1f64..10.0,
            offset in -20f64..20.0,
        ) {
            let spread = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - rewards.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);

            let base = group_advantages_with_eps(&rewards, AdvantageEstimator::Grpo, 0.0).unwrap();
            let transformed: Vec<f64> = rewards.iter().map(|r| scale * r + offset).collect();
            let shifted = group_advantages_with_eps(&transformed, AdvantageEstimator::Grpo, 0.0).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }

        #[test]
        fn token_advantage_never_exceeds_sample_advantage(
            sample_adv in -10f64..10.0,
            weights in proptest::collection::vec(0f64..=1.0, 1..20),
        ) {
            let toks = gcpo_token_advantages(sample_adv, &weights).unwrap();
            prop_assert!(toks.iter().all(|t| t.abs() <= sample_adv.abs() + 1e-15));
        }
    }
}
