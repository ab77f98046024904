//! End-to-end training loop: collect rollout groups, score guidance,
//! normalize weights, estimate advantages, take clipped-surrogate ascent
//! steps, and log metrics.
//!
//! Determinism: every random draw comes from a ChaCha stream seeded by
//! (run seed, purpose tag, step, group, sample), rollout collection is
//! order-preserving under rayon, and gradient reduction happens in fixed
//! batch order, so two runs with the same config produce bit-identical
//! metrics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{dapo_filter, gcpo_token_advantages, group_advantages, Group};
use crate::config::{config_hash, LrSchedule, OptimizerKind, TrainConfig};
use crate::guidance::score_guidance;
use crate::objective::SurrogateEntry;
use crate::policy::{
    self, forward_distributions, greedy_rollout, likelihood_gradient, loss_gradient_report,
    sample_rollout, PolicyParams, PolicyShape, Rollout,
};
use crate::tasks::{build_task_set, make_negative_prompt, task_reward, PromptEncoding, TaskSet};
use crate::weighting::normalize;
use crate::{mix_seed, Error, Result};

// Seed-stream purpose tags.
const TAG_ROLLOUT: u64 = 1;
const TAG_EVAL: u64 = 2;

/// One metrics-CSV row, emitted per RL step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_reward: f64,
    pub eval_reward: f64,
    pub objective: f64,
    pub mean_abs_adv: f64,
    pub mean_eta: f64,
    pub clip_frac: f64,
    pub groups_filtered: usize,
}

pub const METRICS_HEADER: &str =
    "step,mean_reward,eval_reward,objective,mean_abs_adv,mean_eta,clip_frac,groups_filtered";

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.mean_reward,
            r.eval_reward,
            r.objective,
            r.mean_abs_adv,
            r.mean_eta,
            r.clip_frac,
            r.groups_filtered
        ));
    }
    out
}

/// Per-step group accounting (not part of the CSV).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub groups_collected: usize,
    pub groups_trained: usize,
    pub groups_filtered: usize,
    pub params_updated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    },
}

impl OptimizerState {
    pub fn new(config: &TrainConfig, dim: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
        }
    }

    /// Ascent step: `theta += lr * direction(grad)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p += lr * g;
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for i in 0..theta.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    theta[i] += lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Saved training state: parameters, optimizer moments, and the hash of the
/// config that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub step: usize,
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.params.validate()?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<MetricsRow>,
    pub step_stats: Vec<StepStats>,
    /// Mean eval reward after warmup, before any RL step.
    pub post_warmup_eval: f64,
    pub final_eval: f64,
    /// The last step's trained groups, with advantages populated.
    pub last_batch: Vec<Group>,
    pub config_hash: String,
}

/// Hooks invoked from inside the loop; used for checkpointing and
/// diagnostics without giving the loop any file-system knowledge.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Called at every eval point with (step, params, optimizer).
    #[allow(clippy::type_complexity)]
    pub on_eval: Option<Box<dyn FnMut(usize, &PolicyParams, &OptimizerState) -> Result<()> + 'a>>,
    /// Called once if training aborts on a non-finite objective/params.
    #[allow(clippy::type_complexity)]
    pub on_diverge: Option<Box<dyn FnMut(usize, &PolicyParams) + 'a>>,
}

// Parameters beyond this magnitude guarantee overflow in later forward
// passes (products of two bounded factors stay finite below it); treat
// crossing it as divergence rather than waiting for a NaN.
const PARAM_DIVERGENCE_BOUND: f64 = 1e100;

fn check_params_sane(params: &PolicyParams, step: usize) -> Result<()> {
    if params
        .theta
        .iter()
        .any(|v| !v.is_finite() || v.abs() > PARAM_DIVERGENCE_BOUND)
    {
        return Err(Error::Diverged {
            step,
            detail: "parameter overflow after update".into(),
        });
    }
    Ok(())
}

fn schedule_lr(config: &TrainConfig, step: usize) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.learning_rate,
        LrSchedule::Cosine => {
            let progress = (step.saturating_sub(1)) as f64 / config.steps.max(1) as f64;
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Evaluation settings derived from a train config.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub cfg_scale: f64,
    pub greedy: bool,
    pub max_len: usize,
    pub dense_grid_reward: bool,
    pub seed: u64,
}

impl EvalOptions {
    pub fn from_config(config: &TrainConfig, step: usize) -> Self {
        EvalOptions {
            cfg_scale: config.cfg_scale,
            greedy: config.eval_greedy,
            max_len: config.effective_max_len(),
            dense_grid_reward: config.dense_grid_reward,
            seed: mix_seed(&[config.seed, TAG_EVAL, step as u64]),
        }
    }
}

/// Mean verifier reward over prompts x samples (greedy decoding collapses
/// the samples, which are all identical).
pub fn evaluate(
    params: &PolicyParams,
    tasks: &TaskSet,
    neg_strategy: crate::tasks::NegPromptStrategy,
    samples: usize,
    opts: &EvalOptions,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("samples must be >= 1"));
    }
    let rewards: Vec<f64> = tasks
        .tasks
        .par_iter()
        .map(|task| -> Result<f64> {
            let neg = make_negative_prompt(&task.prompt, neg_strategy)?;
            let neg_opt = (opts.cfg_scale > 0.0).then_some(&neg);
            if opts.greedy {
                let r = greedy_rollout(params, &task.prompt, neg_opt, opts.cfg_scale, opts.max_len)?;
                return Ok(task_reward(&task.spec, &r.response, opts.dense_grid_reward));
            }
            let mut total = 0.0;
            for s in 0..samples {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    opts.seed,
                    task.id as u64,
                    s as u64,
                ]));
                let r = sample_rollout(
                    params,
                    &task.prompt,
                    neg_opt,
                    opts.cfg_scale,
                    opts.max_len,
                    &mut rng,
                )?;
                total += task_reward(&task.spec, &r.response, opts.dense_grid_reward);
            }
            Ok(total / samples as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Per-rollout training payload: advantages plus the ratio denominator.
struct TrainedRollout {
    rollout: Rollout,
    ratio_log_probs: Vec<f64>,
    token_advantages: Vec<f64>,
    eta_raw: Vec<f64>,
}

struct PreparedGroup {
    prompt_id: usize,
    sample_advantages: Vec<f64>,
    rollouts: Vec<TrainedRollout>,
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_hooks(config, TrainHooks::default())
}

pub fn train_with_hooks(config: &TrainConfig, mut hooks: TrainHooks<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let tasks = build_task_set(
        config.task,
        config.task_file.as_deref().map(Path::new),
        config.num_tasks,
        config.grid_height,
        config.grid_width,
        config.seed,
    )?;
    let shape = PolicyShape::new(
        config.task.vocab_size(),
        config.task.prompt_vocab_size(),
        config.embed_dim,
        config.hidden_dim,
        config.context_window,
    )?;
    let mut params = PolicyParams::init(shape, config.seed);
    let obj_cfg = config.objective_config()?;
    let weighting = config.weighting();
    let neg_strategy = config.effective_neg_strategy();
    let max_len = config.effective_max_len();
    let cfg_hash = config_hash(config);

    // Supervised warmup on the exact answers (arith only; validated).
    if config.warmup_steps > 0 {
        let mut warmup_opt = OptimizerState::new(config, shape.param_count());
        let targets: Vec<(PromptEncoding, Vec<usize>)> = tasks
            .tasks
            .iter()
            .map(|t| match &t.spec {
                crate::tasks::TaskSpec::Arith(a) => (t.prompt.clone(), a.expected_response()),
                crate::tasks::TaskSpec::Grid(_) => unreachable!("validated"),
            })
            .collect();
        let batch: Vec<(&PromptEncoding, &[usize])> = targets
            .iter()
            .map(|(p, r)| (p, r.as_slice()))
            .collect();
        for _ in 0..config.warmup_steps {
            let (grad, ll) = likelihood_gradient(&params, &batch)?;
            if !ll.is_finite() {
                return Err(Error::Diverged {
                    step: 0,
                    detail: "non-finite warmup likelihood".into(),
                });
            }
            warmup_opt.step(&mut params.theta, &grad, config.learning_rate);
            if let Err(e) = check_params_sane(&params, 0) {
                if let Some(cb) = hooks.on_diverge.as_mut() {
                    cb(0, &params);
                }
                return Err(e);
            }
        }
    }

    // Reference snapshot for the KL penalty: the policy entering RL.
    let reference = (config.kl_beta > 0.0).then(|| params.clone());

    let eval_opts = EvalOptions::from_config(config, 0);
    let post_warmup_eval = evaluate(&params, &tasks, neg_strategy, config.eval_samples, &eval_opts)?;

    let mut optimizer = OptimizerState::new(config, shape.param_count());
    let mut metrics = Vec::with_capacity(config.steps);
    let mut step_stats = Vec::with_capacity(config.steps);
    let mut last_eval = post_warmup_eval;
    let mut last_batch: Vec<Group> = Vec::new();

    for step in 1..=config.steps {
        let lr = schedule_lr(config, step);

        // ---- Collection (order-preserving parallel sampling) ----
        let group_prompt_ids: Vec<usize> = (0..config.groups_per_step)
            .map(|g| ((step - 1) * config.groups_per_step + g) % tasks.len())
            .collect();
        let collected: Vec<Group> = group_prompt_ids
            .par_iter()
            .enumerate()
            .map(|(g_idx, &prompt_id)| -> Result<Group> {
                let task = tasks.get(prompt_id);
                let neg = make_negative_prompt(&task.prompt, neg_strategy)?;
                let neg_opt = (config.cfg_scale > 0.0).then_some(&neg);
                let rollouts = (0..config.group_size)
                    .map(|i| -> Result<Rollout> {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                            config.seed,
                            TAG_ROLLOUT,
                            step as u64,
                            g_idx as u64,
                            i as u64,
                        ]));
                        let mut r = sample_rollout(
                            &params,
                            &task.prompt,
                            neg_opt,
                            config.cfg_scale,
                            max_len,
                            &mut rng,
                        )?;
                        r.prompt_id = prompt_id;
                        r.reward =
                            task_reward(&task.spec, &r.response, config.dense_grid_reward);
                        Ok(r)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Group::new(prompt_id, rollouts))
            })
            .collect::<Result<Vec<_>>>()?;

        let groups_collected = collected.len();
        let all_rewards: Vec<f64> = collected.iter().flat_map(|g| g.rewards()).collect();
        let mean_reward = all_rewards.iter().sum::<f64>() / all_rewards.len() as f64;

        // ---- Online filtering ----
        let retained = if config.effective_filter() {
            dapo_filter(collected)
        } else {
            collected
        };
        let groups_trained = retained.len();
        let groups_filtered = groups_collected - groups_trained;

        // ---- Advantages, guidance, token weights (collection-time params) ----
        let prepared: Vec<PreparedGroup> = retained
            .into_par_iter()
            .map(|group| -> Result<PreparedGroup> {
                let task = tasks.get(group.prompt_id);
                let neg = make_negative_prompt(&task.prompt, neg_strategy)?;
                let sample_advantages =
                    group_advantages(&group.rewards(), config.advantage_estimator)?;
                let rollouts = group
                    .rollouts
                    .into_iter()
                    .zip(&sample_advantages)
                    .map(|(rollout, &adv)| -> Result<TrainedRollout> {
                        let profile =
                            score_guidance(&params, &task.prompt, &neg, &rollout, config.metric)?;
                        let eta_norm = normalize(&profile.eta_raw, weighting)?;
                        let token_advantages = gcpo_token_advantages(adv, &eta_norm)?;
                        let ratio_log_probs = if config.ratio_from_sampling_dist {
                            rollout.behavior_log_probs.clone()
                        } else {
                            // Plain conditional log-probs under the collecting
                            // policy, even when sampling used CFG.
                            forward_distributions(&params, &task.prompt, &rollout.response)?
                                .iter()
                                .zip(&rollout.response)
                                .map(|(d, &y)| d.log_prob(y))
                                .collect()
                        };
                        Ok(TrainedRollout {
                            rollout,
                            ratio_log_probs,
                            token_advantages,
                            eta_raw: profile.eta_raw,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedGroup {
                    prompt_id: group.prompt_id,
                    sample_advantages,
                    rollouts,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // ---- Optimization epochs ----
        let mut objective = 0.0;
        let mut clip_frac = 0.0;
        let params_updated = !prepared.is_empty();
        if params_updated {
            for _epoch in 0..config.epochs_per_batch {
                // Re-scoring per epoch uses the *current* params for the
                // guidance weights; default is the collection-time profile.
                let rescored: Option<Vec<Vec<Vec<f64>>>> = if config.rescore_guidance_per_epoch {
                    Some(
                        prepared
                            .par_iter()
                            .map(|pg| -> Result<Vec<Vec<f64>>> {
                                let task = tasks.get(pg.prompt_id);
                                let neg = make_negative_prompt(&task.prompt, neg_strategy)?;
                                pg.rollouts
                                    .iter()
                                    .zip(&pg.sample_advantages)
                                    .map(|(tr, &adv)| {
                                        let profile = score_guidance(
                                            &params,
                                            &task.prompt,
                                            &neg,
                                            &tr.rollout,
                                            config.metric,
                                        )?;
                                        let eta_norm = normalize(&profile.eta_raw, weighting)?;
                                        gcpo_token_advantages(adv, &eta_norm)
                                    })
                                    .collect()
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                } else {
                    None
                };

                let mut entries = Vec::new();
                for (gi, pg) in prepared.iter().enumerate() {
                    let task = tasks.get(pg.prompt_id);
                    for (ri, tr) in pg.rollouts.iter().enumerate() {
                        let token_advantages: &[f64] = match &rescored {
                            Some(all) => &all[gi][ri],
                            None => &tr.token_advantages,
                        };
                        entries.push(SurrogateEntry {
                            prompt: &task.prompt,
                            response: &tr.rollout.response,
                            behavior_log_probs: &tr.ratio_log_probs,
                            token_advantages,
                        });
                    }
                }
                let report =
                    loss_gradient_report(&params, &entries, reference.as_ref(), &obj_cfg)?;
                if !report.value.is_finite() {
                    if let Some(cb) = hooks.on_diverge.as_mut() {
                        cb(step, &params);
                    }
                    return Err(Error::Diverged {
                        step,
                        detail: format!("objective = {}", report.value),
                    });
                }
                optimizer.step(&mut params.theta, &report.grad, lr);
                if let Err(e) = check_params_sane(&params, step) {
                    if let Some(cb) = hooks.on_diverge.as_mut() {
                        cb(step, &params);
                    }
                    return Err(e);
                }
                objective = report.value;
                clip_frac = report.clip_fraction;
            }
        }

        // ---- Metrics ----
        let (token_total, abs_adv_sum, eta_sum) = prepared.iter().fold(
            (0usize, 0.0f64, 0.0f64),
            |(n, adv, eta), pg| {
                let mut n = n;
                let mut adv = adv;
                let mut eta = eta;
                for tr in &pg.rollouts {
                    n += tr.token_advantages.len();
                    adv += tr.token_advantages.iter().map(|a| a.abs()).sum::<f64>();
                    eta += tr.eta_raw.iter().sum::<f64>();
                }
                (n, adv, eta)
            },
        );
        let mean_abs_adv = if token_total > 0 {
            abs_adv_sum / token_total as f64
        } else {
            0.0
        };
        let mean_eta = if token_total > 0 {
            eta_sum / token_total as f64
        } else {
            0.0
        };

        if step % config.eval_every == 0 {
            let eval_opts = EvalOptions::from_config(config, step);
            last_eval = evaluate(&params, &tasks, neg_strategy, config.eval_samples, &eval_opts)?;
            if let Some(cb) = hooks.on_eval.as_mut() {
                cb(step, &params, &optimizer)?;
            }
        }

        metrics.push(MetricsRow {
            step,
            mean_reward,
            eval_reward: last_eval,
            objective,
            mean_abs_adv,
            mean_eta,
            clip_frac,
            groups_filtered,
        });
        step_stats.push(StepStats {
            step,
            groups_collected,
            groups_trained,
            groups_filtered,
            params_updated,
        });

        if step == config.steps {
            last_batch = prepared
                .into_iter()
                .map(|pg| {
                    let mut g = Group::new(
                        pg.prompt_id,
                        pg.rollouts.iter().map(|tr| tr.rollout.clone()).collect(),
                    );
                    g.sample_advantages = pg.sample_advantages;
                    g.token_advantages = pg
                        .rollouts
                        .into_iter()
                        .map(|tr| tr.token_advantages)
                        .collect();
                    g
                })
                .collect();
        }
    }

    Ok(TrainOutcome {
        params,
        metrics,
        step_stats,
        post_warmup_eval,
        final_eval: last_eval,
        last_batch,
        config_hash: cfg_hash,
    })
}

/// Run summary written next to the metrics CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub post_warmup_eval: f64,
    pub final_eval: f64,
    pub config_hash: String,
}

/// Builds a rayon pool sized by `GCPO_LAB_THREADS` (0 or unset: rayon's
/// default) and runs `f` inside it.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = std::env::var("GCPO_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains and writes metrics.csv, checkpoints at every eval point, the last
/// batch's rollout/group dumps, and a summary; on divergence, dumps the
/// aborting state to divergence_dump.json before returning the error.
pub fn train_to_dir(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let cfg_hash = config_hash(config);

    let outcome = with_thread_pool(|| -> Result<TrainOutcome> {
        let hooks = TrainHooks {
            on_eval: Some(Box::new(
                |step: usize, params: &PolicyParams, opt: &OptimizerState| -> Result<()> {
                    let ckpt = Checkpoint {
                        version: CHECKPOINT_VERSION,
                        config_hash: cfg_hash.clone(),
                        step,
                        params: params.clone(),
                        optimizer: opt.clone(),
                    };
                    ckpt.save(&out_dir.join(format!("checkpoint_step{step:05}.json")))
                },
            )),
            on_diverge: Some(Box::new(|step: usize, params: &PolicyParams| {
                let dump = serde_json::json!({
                    "step": step,
                    "theta": params.theta,
                    "shape": params.shape,
                });
                let _ = std::fs::write(
                    out_dir.join("divergence_dump.json"),
                    dump.to_string(),
                );
            })),
        };
        train_with_hooks(config, hooks)
    })??;

    std::fs::write(out_dir.join("metrics.csv"), metrics_to_csv(&outcome.metrics))?;

    let final_ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: outcome.config_hash.clone(),
        step: config.steps,
        params: outcome.params.clone(),
        optimizer: OptimizerState::new(config, outcome.params.shape.param_count()),
    };
    final_ckpt.save(&out_dir.join("checkpoint_final.json"))?;

    let rollouts: Vec<Rollout> = outcome
        .last_batch
        .iter()
        .flat_map(|g| g.rollouts.iter().cloned())
        .collect();
    let file = std::fs::File::create(out_dir.join("rollouts.jsonl"))?;
    policy::write_rollouts_jsonl(std::io::BufWriter::new(file), &rollouts)?;

    let mut groups_file = std::io::BufWriter::new(std::fs::File::create(
        out_dir.join("groups.jsonl"),
    )?);
    {
        use std::io::Write;
        for g in &outcome.last_batch {
            serde_json::to_writer(&mut groups_file, g)?;
            groups_file.write_all(b"\n")?;
        }
    }

    let summary = RunSummary {
        steps: config.steps,
        post_warmup_eval: outcome.post_warmup_eval,
        final_eval: outcome.final_eval,
        config_hash: outcome.config_hash.clone(),
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Algorithm;
    use crate::tasks::TaskKind;

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.steps = 3;
        cfg.num_tasks = 4;
        cfg.group_size = 4;
        cfg.groups_per_step = 2;
        cfg.eval_every = 2;
        cfg.eval_samples = 2;
        cfg.embed_dim = 4;
        cfg.hidden_dim = 8;
        cfg
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut cfg = tiny_config();
        cfg.learning_rate = 0.0;
        let outcome = train(&cfg).unwrap();
        let shape = outcome.params.shape;
        let initial = PolicyParams::init(shape, cfg.seed);
        assert_eq!(outcome.params.theta, initial.theta);
    }

    #[test]
    fn grpo_preset_equals_gcpo_with_uniform_weighting() {
        let mut grpo = tiny_config();
        grpo.algorithm = Algorithm::Grpo;
        let mut gcpo = tiny_config();
        gcpo.algorithm = Algorithm::Gcpo;
        gcpo.normalization = Some(crate::config::NormalizationKind::Uniform);

        let a = train(&grpo).unwrap();
        let b = train(&gcpo).unwrap();
        assert_eq!(a.params.theta, b.params.theta);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn same_seed_runs_are_bit_identical() {
        let cfg = tiny_config();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(metrics_to_csv(&a.metrics), metrics_to_csv(&b.metrics));
        assert_eq!(a.params.theta, b.params.theta);
    }

    #[test]
    fn filtering_accounting_holds() {
        let mut cfg = tiny_config();
        cfg.algorithm = Algorithm::Dapo;
        cfg.steps = 5;
        let outcome = train(&cfg).unwrap();
        assert_eq!(outcome.step_stats.len(), 5);
        for stats in &outcome.step_stats {
            assert_eq!(
                stats.groups_collected,
                stats.groups_trained + stats.groups_filtered
            );
            assert_eq!(stats.groups_collected, cfg.groups_per_step);
            assert_eq!(stats.params_updated, stats.groups_trained > 0);
        }
    }

    #[test]
    fn metrics_rows_match_steps() {
        let cfg = tiny_config();
        let outcome = train(&cfg).unwrap();
        assert_eq!(outcome.metrics.len(), cfg.steps);
        let csv = metrics_to_csv(&outcome.metrics);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(lines.count(), cfg.steps);
    }

    #[test]
    fn grid_task_smoke() {
        let mut cfg = tiny_config();
        cfg.task = TaskKind::Grid;
        cfg.cfg_scale = 5.0;
        cfg.steps = 2;
        let outcome = train(&cfg).unwrap();
        assert_eq!(outcome.metrics.len(), 2);
        assert!(outcome.metrics.iter().all(|m| m.mean_reward >= 0.0));
    }

    #[test]
    fn evaluate_uniform_policy_hits_chance_level() {
        // Uniform policy on one arith task: P(correct) is the probability of
        // emitting exactly the answer digits then EOS, each token uniform
        // over the 11-word vocabulary.
        let spec = crate::tasks::ArithSpec {
            a: 3,
            b: 4,
            op: crate::tasks::ArithOp::Add,
        };
        let prompt = crate::tasks::PromptEncoding::positive(
            TaskKind::Arith,
            crate::tasks::arith_prompt_tokens(&spec),
        )
        .unwrap();
        let task = crate::tasks::Task {
            id: 0,
            spec: crate::tasks::TaskSpec::Arith(spec),
            prompt,
        };
        let tasks = TaskSet::new(TaskKind::Arith, vec![task]).unwrap();
        let shape = PolicyShape::new(11, 15, 4, 8, 4).unwrap();
        let params = PolicyParams::zeros(shape);

        let n = 4000;
        let opts = EvalOptions {
            cfg_scale: 0.0,
            greedy: false,
            max_len: 6,
            dense_grid_reward: true,
            seed: 7,
        };
        let mean = evaluate(
            &params,
            &tasks,
            crate::tasks::NegPromptStrategy::WrongSuffix,
            n,
            &opts,
        )
        .unwrap();
        // Answer "7": P = (1/11) * (1/11).
        let p = 1.0 / 121.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (mean - p).abs() <= 4.0 * sigma + 1e-9,
            "mean {mean}, chance {p}, sigma {sigma}"
        );
    }

    #[test]
    fn evaluate_perfect_policy_scores_one() {
        // Hand-built network that deterministically answers "0" + EOS for
        // the task 0 + 0. Embedding dim 2, hidden 1, so the weights can be
        // traced by hand: the hidden unit detects "previous token was the
        // digit-0 token" and flips the output from digit-0 to EOS.
        let spec = crate::tasks::ArithSpec {
            a: 0,
            b: 0,
            op: crate::tasks::ArithOp::Add,
        };
        assert_eq!(spec.expected_response(), vec![1, 0]);
        let prompt = crate::tasks::PromptEncoding::positive(
            TaskKind::Arith,
            crate::tasks::arith_prompt_tokens(&spec),
        )
        .unwrap();
        let task = crate::tasks::Task {
            id: 0,
            spec: crate::tasks::TaskSpec::Arith(spec),
            prompt,
        };
        let tasks = TaskSet::new(TaskKind::Arith, vec![task]).unwrap();

        let shape = PolicyShape::new(11, 15, 2, 1, 4).unwrap();
        let mut params = PolicyParams::zeros(shape);
        let e = 2;
        let token_embed_off = shape.prompt_vocab * e;
        let w1_off = token_embed_off + shape.vocab * e;
        let b1_off = w1_off + shape.hidden * shape.input_dim();
        let w2_off = b1_off + shape.hidden;
        let b2_off = w2_off + shape.vocab * shape.hidden;

        // token_embed[1] = [1, 0]; hidden unit reads slot of y_{t-1}.
        params.theta[token_embed_off + e] = 1.0;
        params.theta[w1_off + e] = 100.0; // x[e] is first coord of y_{t-1} slot
        params.theta[w2_off] = 200.0; // EOS logit rides the detector
        params.theta[b2_off + 1] = 100.0; // digit-0 token favored at t = 0

        let opts = EvalOptions {
            cfg_scale: 0.0,
            greedy: false,
            max_len: 6,
            dense_grid_reward: true,
            seed: 3,
        };
        let mean = evaluate(
            &params,
            &tasks,
            crate::tasks::NegPromptStrategy::WrongSuffix,
            8,
            &opts,
        )
        .unwrap();
        assert_eq!(mean, 1.0);

        let greedy_opts = EvalOptions { greedy: true, ..opts };
        let mean = evaluate(
            &params,
            &tasks,
            crate::tasks::NegPromptStrategy::WrongSuffix,
            8,
            &greedy_opts,
        )
        .unwrap();
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn ratio_source_switch_matters_only_under_guidance() {
        // With cfg_scale = 0 the sampling distribution IS the plain
        // conditional, so the switch cannot change anything.
        let mut cfg = tiny_config();
        cfg.warmup_steps = 30;
        cfg.epochs_per_batch = 2;
        let mut alt = cfg.clone();
        alt.ratio_from_sampling_dist = true;
        let a = train(&cfg).unwrap();
        let b = train(&alt).unwrap();
        assert_eq!(a.params.theta, b.params.theta);

        // Guided sampling (grid, cfg_scale > 0): the two ratio denominators
        // genuinely differ once off-policy epochs engage.
        let mut cfg = tiny_config();
        cfg.task = TaskKind::Grid;
        cfg.cfg_scale = 5.0;
        cfg.epochs_per_batch = 2;
        let mut alt = cfg.clone();
        alt.ratio_from_sampling_dist = true;
        let a = train(&cfg).unwrap();
        let b = train(&alt).unwrap();
        assert_ne!(a.params.theta, b.params.theta);
    }

    #[test]
    fn guidance_rescoring_only_matters_with_extra_epochs() {
        // Single epoch: rescoring recomputes the same profile with the same
        // (collection-time) parameters.
        let cfg = tiny_config();
        let mut rescored = cfg.clone();
        rescored.rescore_guidance_per_epoch = true;
        let a = train(&cfg).unwrap();
        let b = train(&rescored).unwrap();
        assert_eq!(a.params.theta, b.params.theta);

        // With two epochs the second epoch scores under updated params.
        // Softmax weighting reacts to the raw divergence scale (histogram
        // only to ranks, which rarely flip on two-token responses).
        let mut cfg = tiny_config();
        cfg.epochs_per_batch = 2;
        cfg.warmup_steps = 30;
        cfg.learning_rate = 0.05;
        cfg.normalization = Some(crate::config::NormalizationKind::Softmax);
        let mut rescored = cfg.clone();
        rescored.rescore_guidance_per_epoch = true;
        let a = train(&cfg).unwrap();
        let b = train(&rescored).unwrap();
        assert_ne!(a.params.theta, b.params.theta);
    }

    #[test]
    fn cosine_schedule_decays() {
        let mut cfg = tiny_config();
        cfg.lr_schedule = LrSchedule::Cosine;
        cfg.steps = 100;
        let first = schedule_lr(&cfg, 1);
        let mid = schedule_lr(&cfg, 51);
        let last = schedule_lr(&cfg, 100);
        assert!((first - cfg.learning_rate).abs() < 1e-12);
        assert!(mid < first);
        assert!(last < mid);
        assert!(last > 0.0);
    }

    #[test]
    fn optimizer_sgd_and_adam_ascend() {
        let mut theta = vec![0.0, 0.0];
        let grad = vec![1.0, -2.0];
        let mut sgd = OptimizerState::Sgd;
        sgd.step(&mut theta, &grad, 0.1);
        assert_eq!(theta, vec![0.1, -0.2]);

        let cfg = TrainConfig::default();
        let mut adam = OptimizerState::new(&cfg, 2);
        let mut theta = vec![0.0, 0.0];
        adam.step(&mut theta, &grad, 0.1);
        // First adam step moves by ~lr in the gradient sign direction.
        assert!(theta[0] > 0.09 && theta[0] < 0.11);
        assert!(theta[1] < -0.09 && theta[1] > -0.11);
    }
}
