//! Run configuration: a flat JSON document with algorithm presets.
//!
//! Every knob has a default, unknown keys are rejected by name, and the
//! resolved document has a content hash that is stable under key reordering
//! (canonical form sorts keys before hashing).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advantage::AdvantageEstimator;
use crate::guidance::DivergenceMetric;
use crate::objective::{Algorithm, ObjectiveConfig};
use crate::tasks::{NegPromptStrategy, TaskKind};
use crate::weighting::NormalizationStrategy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Parameter-free strategy selector; `softmax_temperature` and
/// `topk_fraction` supply the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    Histogram,
    Softmax,
    Minmax,
    HardTopk,
    Uniform,
}

/// Full training configuration. `Option` fields default per task family or
/// algorithm preset; see the `effective_*` accessors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub task: TaskKind,
    /// Load tasks from this JSON file instead of the built-in generator.
    pub task_file: Option<String>,
    pub num_tasks: usize,
    pub grid_height: usize,
    pub grid_width: usize,

    pub group_size: usize,
    pub groups_per_step: usize,
    pub steps: usize,
    /// Supervised likelihood steps before RL (arith task only).
    pub warmup_steps: usize,
    pub epochs_per_batch: usize,

    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,

    pub cfg_scale: f64,
    /// None: grid tasks use `empty`, arith tasks use `wrong_suffix`.
    pub negative_prompt: Option<NegPromptStrategy>,
    pub metric: DivergenceMetric,
    /// None: the algorithm preset picks (histogram for GCPO, uniform for
    /// GRPO/DAPO, hard top-k for the VPPO-like preset).
    pub normalization: Option<NormalizationKind>,
    pub softmax_temperature: f64,
    pub topk_fraction: f64,

    pub algorithm: Algorithm,
    pub advantage_estimator: AdvantageEstimator,
    pub clip_low: f64,
    /// None: symmetric band, except DAPO's default 0.28.
    pub clip_high: Option<f64>,
    pub kl_beta: f64,
    /// None: on for DAPO, off otherwise.
    pub filter_zero_variance: Option<bool>,

    /// None: grid uses H*W, arith uses a small digit budget.
    pub max_len: Option<usize>,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub eval_greedy: bool,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_window: usize,

    /// Use the recorded sampling distribution (CFG-modified when guided) as
    /// the ratio denominator instead of the plain conditional log-probs.
    pub ratio_from_sampling_dist: bool,
    /// Recompute guidance profiles with current params on every optimization
    /// epoch instead of once at collection.
    pub rescore_guidance_per_epoch: bool,
    /// Grid reward as constraint fraction (dense) vs all-or-nothing.
    pub dense_grid_reward: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            task: TaskKind::Arith,
            task_file: None,
            num_tasks: 20,
            grid_height: 4,
            grid_width: 4,
            group_size: 8,
            groups_per_step: 4,
            steps: 200,
            warmup_steps: 0,
            epochs_per_batch: 1,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            learning_rate: 1e-2,
            lr_schedule: LrSchedule::Constant,
            cfg_scale: 0.0,
            negative_prompt: None,
            metric: DivergenceMetric::Kl,
            normalization: None,
            softmax_temperature: 1.0,
            topk_fraction: 0.4,
            algorithm: Algorithm::Gcpo,
            advantage_estimator: AdvantageEstimator::Grpo,
            clip_low: 0.2,
            clip_high: None,
            kl_beta: 0.0,
            filter_zero_variance: None,
            max_len: None,
            eval_every: 10,
            eval_samples: 8,
            eval_greedy: false,
            embed_dim: 8,
            hidden_dim: 32,
            context_window: 4,
            ratio_from_sampling_dist: false,
            rescore_guidance_per_epoch: false,
            dense_grid_reward: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.groups_per_step == 0 || self.num_tasks == 0 {
            return Err(Error::Config(
                "groups_per_step and num_tasks must be >= 1".into(),
            ));
        }
        if self.epochs_per_batch == 0 {
            return Err(Error::Config("epochs_per_batch must be >= 1".into()));
        }
        if self.cfg_scale < 0.0 || !self.cfg_scale.is_finite() {
            return Err(Error::Config("cfg_scale must be >= 0".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if self.eval_every == 0 || self.eval_samples == 0 {
            return Err(Error::Config(
                "eval_every and eval_samples must be >= 1".into(),
            ));
        }
        if self.warmup_steps > 0 && self.task != TaskKind::Arith {
            return Err(Error::Config(
                "warmup_steps applies to the arith task only".into(),
            ));
        }
        if self.task == TaskKind::Grid && self.grid_height * self.grid_width == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if let Some(ml) = self.max_len {
            if ml == 0 {
                return Err(Error::Config("max_len must be >= 1".into()));
            }
            if self.task == TaskKind::Grid && ml < self.grid_height * self.grid_width {
                return Err(Error::Config(
                    "grid max_len must cover the full grid".into(),
                ));
            }
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.context_window == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        self.weighting().validate().map_err(|e| match e {
            Error::InvalidInput(m) => Error::Config(m),
            other => other,
        })?;
        self.objective_config()?;
        let strategy = self.effective_neg_strategy();
        let ok = crate::tasks::compatible_strategies(self.task).contains(&strategy);
        if !ok {
            return Err(Error::Config(format!(
                "negative_prompt {strategy:?} is not valid for {:?} tasks",
                self.task
            )));
        }
        Ok(())
    }

    pub fn effective_neg_strategy(&self) -> NegPromptStrategy {
        self.negative_prompt.unwrap_or(match self.task {
            TaskKind::Grid => NegPromptStrategy::Empty,
            TaskKind::Arith => NegPromptStrategy::WrongSuffix,
        })
    }

    pub fn effective_max_len(&self) -> usize {
        self.max_len.unwrap_or(match self.task {
            TaskKind::Grid => self.grid_height * self.grid_width,
            TaskKind::Arith => 6,
        })
    }

    pub fn effective_filter(&self) -> bool {
        self.filter_zero_variance
            .unwrap_or_else(|| self.algorithm.filters_by_default())
    }

    pub fn weighting(&self) -> NormalizationStrategy {
        let configured = self.normalization.map(|kind| match kind {
            NormalizationKind::Histogram => NormalizationStrategy::Histogram,
            NormalizationKind::Softmax => NormalizationStrategy::Softmax {
                temperature: self.softmax_temperature,
            },
            NormalizationKind::Minmax => NormalizationStrategy::Minmax,
            NormalizationKind::HardTopk => NormalizationStrategy::HardTopk {
                fraction: self.topk_fraction,
            },
            NormalizationKind::Uniform => NormalizationStrategy::Uniform,
        });
        self.algorithm.weighting(configured, self.topk_fraction)
    }

    pub fn objective_config(&self) -> Result<ObjectiveConfig> {
        let clip_high = self
            .clip_high
            .unwrap_or_else(|| self.algorithm.default_clip_high(self.clip_low));
        ObjectiveConfig::new(self.clip_low, clip_high, self.kl_beta, self.algorithm)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Canonical JSON text: object keys sorted, recursively. serde_json's
/// default map is ordered by key, so serializing a re-parsed value is
/// already canonical.
pub fn canonical_json(value: &serde_json::Value) -> String {
    value.to_string()
}

/// Content hash of a config document, stable under key reordering.
pub fn config_hash(config: &TrainConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    hash_value(&value)
}

pub fn hash_value(value: &serde_json::Value) -> String {
    let canon = canonical_json(value);
    let digest = Sha256::digest(canon.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
