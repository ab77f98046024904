//! Gradient oracles: the analytic surrogate gradient is checked against
//! central finite differences of the objective value and, in the on-policy
//! uniform-weight case, against the plain advantage-weighted likelihood
//! estimator it must reduce to.

use gcpo_lab::objective::{surrogate_value, Algorithm, ObjectiveConfig, SurrogateEntry};
use gcpo_lab::policy::{
    forward_distributions, loss_gradient, loss_gradient_report, PolicyParams, PolicyShape,
};
use gcpo_lab::tasks::{PromptEncoding, PromptKind, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prompt(tokens: Vec<usize>) -> PromptEncoding {
    PromptEncoding {
        task: TaskKind::Arith,
        kind: PromptKind::Positive,
        tokens,
    }
}

struct Instance {
    prompt: PromptEncoding,
    responses: Vec<Vec<usize>>,
    behaviors: Vec<Vec<f64>>,
    advantages: Vec<Vec<f64>>,
}

impl Instance {
    fn entries(&self) -> Vec<SurrogateEntry<'_>> {
        (0..self.responses.len())
            .map(|i| SurrogateEntry {
                prompt: &self.prompt,
                response: &self.responses[i],
                behavior_log_probs: &self.behaviors[i],
                token_advantages: &self.advantages[i],
            })
            .collect()
    }
}

/// Random off-policy instance: behavior log-probs come from a perturbed
/// copy of the params, so ratios land inside, above, and below the band.
fn random_instance(
    params: &PolicyParams,
    shape: PolicyShape,
    seed: u64,
    n_rollouts: usize,
    t_len: usize,
    ratio_spread: f64,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = prompt(vec![
        rng.random_range(0..shape.prompt_vocab),
        rng.random_range(0..shape.prompt_vocab),
    ]);
    let mut responses = Vec::new();
    let mut behaviors = Vec::new();
    let mut advantages = Vec::new();
    for _ in 0..n_rollouts {
        let response: Vec<usize> = (0..t_len).map(|_| rng.random_range(0..shape.vocab)).collect();
        let dists = forward_distributions(params, &p, &response).unwrap();
        // Behavior = current log-prob shifted by a random log-ratio.
        let behavior: Vec<f64> = response
            .iter()
            .enumerate()
            .map(|(t, &y)| {
                let shift = (rng.random::<f64>() * 2.0 - 1.0) * ratio_spread;
                dists[t].log_prob(y) - shift
            })
            .collect();
        let adv: Vec<f64> = (0..t_len)
            .map(|_| {
                let a = rng.random::<f64>() * 4.0 - 2.0;
                // Keep advantages away from 0 so every token contributes.
                if a.abs() < 0.1 {
                    0.1f64.copysign(a)
                } else {
                    a
                }
            })
            .collect();
        responses.push(response);
        behaviors.push(behavior);
        advantages.push(adv);
    }
    Instance {
        prompt: p,
        responses,
        behaviors,
        advantages,
    }
}

/// True when some ratio sits within `margin` of a clip-band edge, where the
/// min/clip composition has a kink and finite differences are meaningless.
fn near_kink(params: &PolicyParams, inst: &Instance, cfg: &ObjectiveConfig, margin: f64) -> bool {
    let lo = 1.0 - cfg.clip_low;
    let hi = 1.0 + cfg.clip_high;
    for (ri, response) in inst.responses.iter().enumerate() {
        let dists = forward_distributions(params, &inst.prompt, response).unwrap();
        for (t, &y) in response.iter().enumerate() {
            let w = (dists[t].log_prob(y) - inst.behaviors[ri][t]).exp();
            if (w - lo).abs() < margin || (w - hi).abs() < margin {
                return true;
            }
        }
    }
    false
}

fn ratio_regimes(params: &PolicyParams, inst: &Instance, cfg: &ObjectiveConfig) -> (bool, bool, bool) {
    let lo = 1.0 - cfg.clip_low;
    let hi = 1.0 + cfg.clip_high;
    let (mut inside, mut above, mut below) = (false, false, false);
    for (ri, response) in inst.responses.iter().enumerate() {
        let dists = forward_distributions(params, &inst.prompt, response).unwrap();
        for (t, &y) in response.iter().enumerate() {
            let w = (dists[t].log_prob(y) - inst.behaviors[ri][t]).exp();
            if w > hi {
                above = true;
            } else if w < lo {
                below = true;
            } else {
                inside = true;
            }
        }
    }
    (inside, above, below)
}

fn central_difference(
    params: &PolicyParams,
    entries: &[SurrogateEntry<'_>],
    reference: Option<&PolicyParams>,
    cfg: &ObjectiveConfig,
    h: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.theta.len()];
    let mut probe = params.clone();
    for i in 0..params.theta.len() {
        probe.theta[i] = params.theta[i] + h;
        let plus = surrogate_value(&probe, entries, reference, cfg).unwrap();
        probe.theta[i] = params.theta[i] - h;
        let minus = surrogate_value(&probe, entries, reference, cfg).unwrap();
        probe.theta[i] = params.theta[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Max absolute component error relative to the gradient's scale.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |worst, (&a, &n)| worst.max((a - n).abs()))
        / scale
}

#[test]
fn gradient_matches_finite_differences_across_clip_regimes() {
    let shape = PolicyShape::new(5, 4, 3, 6, 4).unwrap();
    let cfg = ObjectiveConfig::symmetric(0.2, 0.0, Algorithm::Grpo).unwrap();
    let h = 1e-5;
    let (mut saw_inside, mut saw_above, mut saw_below) = (false, false, false);
    let mut checked = 0;
    for seed in 0..10u64 {
        let params = PolicyParams::init(shape, seed);
        let inst = random_instance(&params, shape, 1000 + seed, 2, 3, 0.8);
        if near_kink(&params, &inst, &cfg, 1e-6) {
            continue;
        }
        let (i, a, b) = ratio_regimes(&params, &inst, &cfg);
        saw_inside |= i;
        saw_above |= a;
        saw_below |= b;

        let entries = inst.entries();
        let (analytic, value) = loss_gradient(&params, &entries, None, &cfg).unwrap();
        let direct = surrogate_value(&params, &entries, None, &cfg).unwrap();
        assert!((value - direct).abs() < 1e-12, "value routes disagree");

        let numeric = central_difference(&params, &entries, None, &cfg, h);
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
        checked += 1;
    }
    assert!(checked >= 8, "only {checked} instances survived kink filter");
    assert!(saw_inside && saw_above && saw_below, "clip regimes not all covered");
}

#[test]
fn gradient_with_kl_penalty_matches_finite_differences() {
    let shape = PolicyShape::new(5, 4, 3, 6, 4).unwrap();
    let cfg = ObjectiveConfig::symmetric(0.2, 0.37, Algorithm::Grpo).unwrap();
    let params = PolicyParams::init(shape, 5);
    let reference = PolicyParams::init(shape, 77);
    let inst = random_instance(&params, shape, 2024, 2, 3, 0.5);
    assert!(!near_kink(&params, &inst, &cfg, 1e-6));

    let entries = inst.entries();
    let (analytic, _) = loss_gradient(&params, &entries, Some(&reference), &cfg).unwrap();
    let numeric = central_difference(&params, &entries, Some(&reference), &cfg, 1e-5);
    let err = relative_error(&analytic, &numeric);
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn on_policy_uniform_weights_reduce_to_reinforce_estimator() {
    // theta == theta_old and eta == 1: the clipped surrogate's gradient is
    // the advantage-weighted likelihood gradient
    //   (1/N) sum_i (1/T_i) sum_t A_i * grad log pi(y_t).
    // Oracle: central differences of that plain estimator's objective,
    // which has no clipping in it at all.
    let shape = PolicyShape::new(5, 4, 3, 6, 4).unwrap();
    let params = PolicyParams::init(shape, 31);
    let cfg = ObjectiveConfig::symmetric(0.2, 0.0, Algorithm::Grpo).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let p = prompt(vec![0, 2]);
    let mut responses = Vec::new();
    let mut behaviors = Vec::new();
    let mut advantages = Vec::new();
    let sample_advs = [1.3, -0.7];
    for &adv in &sample_advs {
        let response: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let dists = forward_distributions(&params, &p, &response).unwrap();
        let behavior: Vec<f64> = response
            .iter()
            .enumerate()
            .map(|(t, &y)| dists[t].log_prob(y))
            .collect();
        responses.push(response);
        behaviors.push(behavior);
        advantages.push(vec![adv; 4]);
    }
    let entries: Vec<SurrogateEntry<'_>> = (0..2)
        .map(|i| SurrogateEntry {
            prompt: &p,
            response: &responses[i],
            behavior_log_probs: &behaviors[i],
            token_advantages: &advantages[i],
        })
        .collect();

    let (analytic, _) = loss_gradient(&params, &entries, None, &cfg).unwrap();

    let reinforce_objective = |theta: &PolicyParams| -> f64 {
        let mut total = 0.0;
        for i in 0..2 {
            let dists = forward_distributions(theta, &p, &responses[i]).unwrap();
            let seq: f64 = responses[i]
                .iter()
                .enumerate()
                .map(|(t, &y)| sample_advs[i] * dists[t].log_prob(y))
                .sum();
            total += seq / responses[i].len() as f64;
        }
        total / 2.0
    };
    let h = 1e-5;
    let mut numeric = vec![0.0; params.theta.len()];
    let mut probe = params.clone();
    for i in 0..params.theta.len() {
        probe.theta[i] = params.theta[i] + h;
        let plus = reinforce_objective(&probe);
        probe.theta[i] = params.theta[i] - h;
        let minus = reinforce_objective(&probe);
        probe.theta[i] = params.theta[i];
        numeric[i] = (plus - minus) / (2.0 * h);
    }
    let err = relative_error(&analytic, &numeric);
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn loss_gradient_value_equals_surrogate_value_bitwise() {
    let shape = PolicyShape::new(6, 5, 4, 8, 4).unwrap();
    for seed in 0..5u64 {
        let params = PolicyParams::init(shape, seed);
        let cfg = ObjectiveConfig::new(0.2, 0.28, 0.0, Algorithm::Dapo).unwrap();
        let inst = random_instance(&params, shape, 900 + seed, 3, 4, 0.6);
        let entries = inst.entries();
        let report = loss_gradient_report(&params, &entries, None, &cfg).unwrap();
        let direct = surrogate_value(&params, &entries, None, &cfg).unwrap();
        assert_eq!(report.value.to_bits(), direct.to_bits());
    }
}
