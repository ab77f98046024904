//! Normalization of raw per-token divergences into [0, 1] weights.
//!
//! The default is rank-based histogram equalization: each token's raw score
//! is replaced by its empirical-CDF percentile within the response, so the
//! largest score always maps to 1, the smallest to 0, and the median to 0.5
//! regardless of absolute scale. Softmax, min-max, a hard top-k filter, and
//! a uniform pass-through are provided as ablation baselines.
//!
//! Normalization scope is one response (one rollout); there is no pooling
//! across rollouts or groups.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Strategy for mapping raw divergences to [0, 1] token weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizationStrategy {
    /// Midrank empirical CDF (histogram equalization).
    Histogram,
    /// `min(1, T * softmax(eta / temperature))`, rescaled by length so the
    /// average magnitude is comparable to histogram's 0.5.
    Softmax { temperature: f64 },
    /// `(eta - min) / (max - min)`; an all-equal vector maps to all 0.5.
    Minmax,
    /// 1 for the `ceil(fraction * T)` largest entries, 0 elsewhere. Ties at
    /// the cutoff are broken by earliest position.
    HardTopk { fraction: f64 },
    /// All 1: reduces token weighting to plain advantage broadcasting.
    Uniform,
}

impl NormalizationStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NormalizationStrategy::Softmax { temperature } => {
                if !(temperature > 0.0) || !temperature.is_finite() {
                    return Err(Error::invalid(format!(
                        "softmax temperature must be > 0, got {temperature}"
                    )));
                }
            }
            NormalizationStrategy::HardTopk { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::invalid(format!(
                        "topk fraction must be in (0, 1], got {fraction}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Normalizes one response's raw divergences into [0, 1] weights.
pub fn normalize(eta_raw: &[f64], strategy: NormalizationStrategy) -> Result<Vec<f64>> {
    strategy.validate()?;
    if eta_raw.is_empty() {
        return Err(Error::invalid("normalize requires at least one entry"));
    }
    if eta_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("normalize input has non-finite entry"));
    }
    let t = eta_raw.len();
    Ok(match strategy {
        NormalizationStrategy::Histogram => histogram_equalize(eta_raw),
        NormalizationStrategy::Softmax { temperature } => {
            let lse = crate::numerics::logsumexp(
                &eta_raw.iter().map(|v| v / temperature).collect::<Vec<_>>(),
            )?;
            eta_raw
                .iter()
                .map(|v| (t as f64 * (v / temperature - lse).exp()).min(1.0))
                .collect()
        }
        NormalizationStrategy::Minmax => {
            let min = eta_raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eta_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                vec![0.5; t]
            } else {
                eta_raw.iter().map(|v| (v - min) / (max - min)).collect()
            }
        }
        NormalizationStrategy::HardTopk { fraction } => {
            let keep = (fraction * t as f64).ceil() as usize;
            let keep = keep.clamp(1, t);
            let mut order: Vec<usize> = (0..t).collect();
            // Descending by value, earliest position wins ties at the cutoff.
            order.sort_by(|&a, &b| {
                eta_raw[b]
                    .partial_cmp(&eta_raw[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut out = vec![0.0; t];
            for &idx in order.iter().take(keep) {
                out[idx] = 1.0;
            }
            out
        }
        NormalizationStrategy::Uniform => vec![1.0; t],
    })
}

/// Midrank empirical CDF: average 0-based rank of each entry (ties share the
/// mean of their rank block) divided by T - 1. A single entry maps to 0.5.
fn histogram_equalize(eta_raw: &[f64]) -> Vec<f64> {
    let t = eta_raw.len();
    if t == 1 {
        return vec![0.5];
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eta_raw[a].partial_cmp(&eta_raw[b]).unwrap());

    let mut midrank = vec![0.0; t];
    let mut start = 0;
    while start < t {
        let mut end = start + 1;
        while end < t && eta_raw[order[end]] == eta_raw[order[start]] {
            end += 1;
        }
        // Mean of ranks start..end.
        let mean_rank = (start + end - 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            midrank[idx] = mean_rank;
        }
        start = end;
    }
    let denom = (t - 1) as f64;
    midrank.iter().map(|r| r / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_distinct_values_sort_rank_oracle() {
        // Oracle: position of each entry in the sorted order, over T - 1.
        let input = [1.0, 2.0, 3.0, 10.0];
        let got = normalize(&input, NormalizationStrategy::Histogram).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        assert_eq!(got, expected);
    }

    #[test]
    fn histogram_all_equal_maps_to_half() {
        let got = normalize(&[7.0; 5], NormalizationStrategy::Histogram).unwrap();
        assert_eq!(got, vec![0.5; 5]);
    }

    #[test]
    fn histogram_midrank_ties() {
        // Tied ranks (0, 1) average to 0.5; divide by T - 1 = 2.
        let got = normalize(&[2.0, 2.0, 5.0], NormalizationStrategy::Histogram).unwrap();
        assert_eq!(got, vec![0.25, 0.25, 1.0]);
    }

    #[test]
    fn histogram_single_entry_is_midpoint() {
        assert_eq!(
            normalize(&[3.4], NormalizationStrategy::Histogram).unwrap(),
            vec![0.5]
        );
    }

    #[test]
    fn hard_topk_forty_percent_of_five() {
        // ceil(0.4 * 5) = 2 entries kept.
        let got = normalize(
            &[5.0, 1.0, 4.0, 2.0, 3.0],
            NormalizationStrategy::HardTopk { fraction: 0.4 },
        )
        .unwrap();
        assert_eq!(got, vec![1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn hard_topk_cutoff_tie_goes_to_earliest_position() {
        let got = normalize(
            &[2.0, 3.0, 2.0],
            NormalizationStrategy::HardTopk { fraction: 2.0 / 3.0 },
        )
        .unwrap();
        assert_eq!(got, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn minmax_and_uniform() {
        let got = normalize(&[1.0, 3.0, 2.0], NormalizationStrategy::Minmax).unwrap();
        assert_eq!(got, vec![0.0, 1.0, 0.5]);
        assert_eq!(
            normalize(&[4.0; 3], NormalizationStrategy::Minmax).unwrap(),
            vec![0.5; 3]
        );
        assert_eq!(
            normalize(&[9.0, -1.0], NormalizationStrategy::Uniform).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn softmax_rescaled_and_clipped() {
        let got = normalize(
            &[0.0, 0.0, 0.0, 0.0],
            NormalizationStrategy::Softmax { temperature: 1.0 },
        )
        .unwrap();
        // Flat input: T * (1/T) = 1 everywhere.
        for v in got {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let peaked = normalize(
            &[100.0, 0.0, 0.0, 0.0],
            NormalizationStrategy::Softmax { temperature: 1.0 },
        )
        .unwrap();
        assert_eq!(peaked[0], 1.0); // clipped
        assert!(peaked[1] < 1e-12);
    }

    #[test]
    fn invalid_parameters_and_inputs_rejected() {
        assert!(normalize(&[1.0], NormalizationStrategy::Softmax { temperature: 0.0 }).is_err());
        assert!(normalize(&[1.0], NormalizationStrategy::HardTopk { fraction: 0.0 }).is_err());
        assert!(normalize(&[1.0], NormalizationStrategy::HardTopk { fraction: 1.5 }).is_err());
        assert!(normalize(&[], NormalizationStrategy::Histogram).is_err());
        assert!(normalize(&[f64::NAN], NormalizationStrategy::Histogram).is_err());
        assert!(normalize(&[f64::INFINITY, 1.0], NormalizationStrategy::Minmax).is_err());
    }

    fn strategies() -> Vec<NormalizationStrategy> {
        vec![
            NormalizationStrategy::Histogram,
            NormalizationStrategy::Softmax { temperature: 1.0 },
            NormalizationStrategy::Minmax,
            NormalizationStrategy::HardTopk { fraction: 0.4 },
            NormalizationStrategy::Uniform,
        ]
    }

    proptest! {
        #[test]
        fn outputs_lie_in_unit_interval(raw in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            for strategy in strategies() {
                let out = normalize(&raw, strategy).unwrap();
                prop_assert!(out.iter().all(|&w| (0.0..=1.0).contains(&w)), "{strategy:?}");
            }
        }

        #[test]
        fn histogram_invariant_under_monotone_transform(
            ints in proptest::collection::vec(-1000i64..1000, 2..30),
        ) {
            // Integer-derived inputs keep distinctness/tie patterns exact
            // under the transforms below.
            let raw: Vec<f64> = ints.iter().map(|&v| v as f64).collect();
            let base = normalize(&raw, NormalizationStrategy::Histogram).unwrap();
            let affine: Vec<f64> = raw.iter().map(|v| 2.0 * v + 1.0).collect();
            let cubic: Vec<f64> = raw.iter().map(|v| v.powi(3)).collect();
            let atan: Vec<f64> = raw.iter().map(|v| (v / 100.0).atan()).collect();
            for transformed in [affine, cubic, atan] {
                let out = normalize(&transformed, NormalizationStrategy::Histogram).unwrap();
                prop_assert_eq!(&out, &base);
            }
        }

        #[test]
        fn histogram_distinct_inputs_give_uniform_grid(
            ints in proptest::collection::vec(-100_000i64..100_000, 2..30),
        ) {
            let mut unique = ints.clone();
            unique.sort_unstable();
            unique.dedup();
            prop_assume!(unique.len() == ints.len());

            let raw: Vec<f64> = ints.iter().map(|&v| v as f64).collect();
            let mut out = normalize(&raw, NormalizationStrategy::Histogram).unwrap();
            out.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let t = raw.len();
            let expected: Vec<f64> = (0..t).map(|k| k as f64 / (t - 1) as f64).collect();
            prop_assert_eq!(out, expected);

            // Extremes: max -> 1, min -> 0.
            let renorm = normalize(&raw, NormalizationStrategy::Histogram).unwrap();
            let argmax = (0..t).max_by(|&a, &b| raw[a].partial_cmp(&raw[b]).unwrap()).unwrap();
            let argmin = (0..t).min_by(|&a, &b| raw[a].partial_cmp(&raw[b]).unwrap()).unwrap();
            prop_assert_eq!(renorm[argmax], 1.0);
            prop_assert_eq!(renorm[argmin], 0.0);
        }

        #[test]
        fn permutation_equivariance_on_distinct_inputs(
            ints in proptest::collection::vec(-100_000i64..100_000, 2..20),
            rotation in 0usize..20,
        ) {
            let mut unique = ints.clone();
            unique.sort_unstable();
            unique.dedup();
            prop_assume!(unique.len() == ints.len());
            let raw: Vec<f64> = ints.iter().map(|&v| v as f64).collect();

            let t = raw.len();
            let shift = rotation % t;
            let permuted: Vec<f64> = (0..t).map(|i| raw[(i + shift) % t]).collect();

            for strategy in strategies() {
                let base = normalize(&raw, strategy).unwrap();
                let perm_out = normalize(&permuted, strategy).unwrap();
                let expected: Vec<f64> = (0..t).map(|i| base[(i + shift) % t]).collect();
                prop_assert_eq!(&perm_out, &expected, "{:?}", strategy);
            }
        }
    }
}
