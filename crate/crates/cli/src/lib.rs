//! Command implementations for the `gcpo` binary.
//!
//! Commands: `train`, `eval`, `ablate`, `heatmap`. Every command loads a
//! flat JSON config, applies `--set key=value` overrides one at a time
//! (failures name the offending key), then writes a run manifest before any
//! other side effect. Exit codes: 0 success, 2 bad config key, 3
//! checkpoint/config mismatch, 1 anything else.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use gcpo_lab::config::{config_hash, hash_value, TrainConfig};
use gcpo_lab::guidance::{score_guidance, write_pgm, write_profile_csv};
use gcpo_lab::policy::{sample_rollout_opts, PolicyShape, SampleOptions};
use gcpo_lab::tasks::{
    build_task_set, compatible_strategies, make_negative_prompt, NegPromptStrategy, PromptKind,
    TaskSpec,
};
use gcpo_lab::trainer::{
    evaluate, train_to_dir, with_thread_pool, Checkpoint, EvalOptions,
};
use gcpo_lab::weighting::normalize;
use gcpo_lab::{mix_seed, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERR: i32 = 1;
pub const EXIT_BAD_CONFIG: i32 = 2;
pub const EXIT_CHECKPOINT_MISMATCH: i32 = 3;

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliFailure {}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidInput(_) => EXIT_BAD_CONFIG,
            _ => EXIT_ERR,
        };
        CliFailure {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliFailure>;

fn bad_config(msg: impl Into<String>) -> CliFailure {
    CliFailure {
        code: EXIT_BAD_CONFIG,
        message: msg.into(),
    }
}

fn other(msg: impl Into<String>) -> CliFailure {
    CliFailure {
        code: EXIT_ERR,
        message: msg.into(),
    }
}

/// Splits one `--set` argument into (dotted key, raw value).
pub fn parse_set(arg: &str) -> CliResult<(String, String)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(bad_config(format!(
            "--set expects KEY=VALUE, got `{arg}`"
        ))),
    }
}

/// Sets a dotted key inside a JSON object tree, creating intermediate
/// objects as needed. The raw value is parsed as JSON when possible and
/// falls back to a plain string (so `steps=5` is a number and
/// `task=arith` a string).
fn apply_override(doc: &mut serde_json::Value, key: &str, raw: &str) -> CliResult<()> {
    let parsed: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| bad_config(format!("key `{key}`: `{part}` is not an object")))?;
        if i == parts.len() - 1 {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert(serde_json::Value::Object(Default::default()));
    }
    unreachable!("non-empty key path");
}

/// Loads the config file and applies overrides one at a time, re-validating
/// after each so an error names the key that caused it.
pub fn load_config(
    config_path: &Path,
    sets: &[String],
    seed: Option<u64>,
) -> CliResult<TrainConfig> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| other(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| bad_config(format!("config is not valid JSON: {e}")))?;

    // The file itself must deserialize (this names unknown keys).
    deserialize_doc(&doc).map_err(|e| bad_config(format!("config file: {e}")))?;

    for set in sets {
        let (key, raw) = parse_set(set)?;
        apply_override(&mut doc, &key, &raw)?;
        deserialize_doc(&doc)
            .map_err(|e| bad_config(format!("invalid value for key `{key}`: {e}")))?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, "seed", &seed.to_string())?;
    }

    let config = deserialize_doc(&doc).map_err(|e| bad_config(e.to_string()))?;
    config.validate().map_err(CliFailure::from)?;
    Ok(config)
}

fn deserialize_doc(doc: &serde_json::Value) -> Result<TrainConfig, serde_json::Error> {
    serde_json::from_value(doc.clone())
}

/// Written to `<out>/manifest.json` before any other side effect. The
/// timestamp lives here and only here; every other output is a pure
/// function of config and seed.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub out_dir: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub created_unix_ms: u128,
}

pub fn write_manifest(
    command: &str,
    config_path: &Path,
    out_dir: &Path,
    config: &TrainConfig,
) -> CliResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| other(e.to_string()))?;
    let snapshot = serde_json::to_value(config).map_err(|e| other(e.to_string()))?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_path: config_path.display().to_string(),
        out_dir: out_dir.display().to_string(),
        config_hash: hash_value(&snapshot),
        config: snapshot,
        created_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_millis(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| other(e.to_string()))?,
    )
    .map_err(|e| other(e.to_string()))?;
    Ok(())
}

pub fn cmd_train(
    config_path: &Path,
    out_dir: &Path,
    sets: &[String],
    seed: Option<u64>,
) -> CliResult<()> {
    let config = load_config(config_path, sets, seed)?;
    write_manifest("train", config_path, out_dir, &config)?;
    let outcome = train_to_dir(&config, out_dir).map_err(CliFailure::from)?;
    println!(
        "trained {} steps: post_warmup_eval={} final_eval={}",
        config.steps, outcome.post_warmup_eval, outcome.final_eval
    );
    println!("metrics: {}", out_dir.join("metrics.csv").display());
    Ok(())
}

/// Shape the config implies for the policy; checked against checkpoints.
fn config_shape(config: &TrainConfig) -> CliResult<PolicyShape> {
    PolicyShape::new(
        config.task.vocab_size(),
        config.task.prompt_vocab_size(),
        config.embed_dim,
        config.hidden_dim,
        config.context_window,
    )
    .map_err(CliFailure::from)
}

fn load_checkpoint_for(config: &TrainConfig, path: &Path) -> CliResult<Checkpoint> {
    let ckpt = Checkpoint::load(path).map_err(|e| other(format!("checkpoint: {e}")))?;
    let expected = config_shape(config)?;
    if ckpt.params.shape != expected {
        return Err(CliFailure {
            code: EXIT_CHECKPOINT_MISMATCH,
            message: format!(
                "checkpoint/config mismatch: checkpoint shape {:?}, config implies {:?}",
                ckpt.params.shape, expected
            ),
        });
    }
    Ok(ckpt)
}

pub fn cmd_eval(
    config_path: &Path,
    checkpoint_path: &Path,
    out_dir: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> CliResult<()> {
    let config = load_config(config_path, sets, seed)?;
    if let Some(out) = out_dir {
        write_manifest("eval", config_path, out, &config)?;
    }
    let ckpt = load_checkpoint_for(&config, checkpoint_path)?;
    let tasks = build_task_set(
        config.task,
        config.task_file.as_deref().map(Path::new),
        config.num_tasks,
        config.grid_height,
        config.grid_width,
        config.seed,
    )
    .map_err(CliFailure::from)?;
    let opts = EvalOptions::from_config(&config, ckpt.step);
    let mean = with_thread_pool(|| {
        evaluate(
            &ckpt.params,
            &tasks,
            config.effective_neg_strategy(),
            config.eval_samples,
            &opts,
        )
    })
    .map_err(CliFailure::from)?
    .map_err(CliFailure::from)?;
    println!("eval_reward={mean}");
    if let Some(out) = out_dir {
        std::fs::write(
            out.join("eval.json"),
            serde_json::json!({ "eval_reward": mean, "checkpoint_step": ckpt.step }).to_string(),
        )
        .map_err(|e| other(e.to_string()))?;
    }
    Ok(())
}

/// Ablation axes mirroring the scoring, normalization, negative-prompt, and
/// algorithm comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Metric,
    Normalization,
    NegativePrompt,
    Algorithm,
}

impl std::str::FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "metric" => Ok(AblationAxis::Metric),
            "normalization" => Ok(AblationAxis::Normalization),
            "negative_prompt" => Ok(AblationAxis::NegativePrompt),
            "algorithm" => Ok(AblationAxis::Algorithm),
            other => Err(format!(
                "unknown axis `{other}` (expected metric, normalization, negative_prompt, algorithm)"
            )),
        }
    }
}

/// (config key, row values) for one axis, respecting task compatibility.
fn axis_values(axis: AblationAxis, config: &TrainConfig) -> (&'static str, Vec<String>) {
    match axis {
        AblationAxis::Metric => (
            "metric",
            ["info_gain", "abs_diff", "kl"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
        AblationAxis::Normalization => (
            "normalization",
            ["softmax", "minmax", "histogram"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
        AblationAxis::NegativePrompt => (
            "negative_prompt",
            compatible_strategies(config.task)
                .iter()
                .map(|s| {
                    serde_json::to_value(s)
                        .expect("strategy serializes")
                        .as_str()
                        .expect("string variant")
                        .to_string()
                })
                .collect(),
        ),
        AblationAxis::Algorithm => (
            "algorithm",
            ["grpo", "gcpo", "dapo", "vppo_like"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
    }
}

/// One training run per axis value with the shared seed; emits
/// `<out>/summary.csv` with a row per value.
pub fn cmd_ablate(
    config_path: &Path,
    axis: AblationAxis,
    out_dir: &Path,
    sets: &[String],
    seed: Option<u64>,
) -> CliResult<()> {
    let base = load_config(config_path, sets, seed)?;
    write_manifest("ablate", config_path, out_dir, &base)?;

    let (key, values) = axis_values(axis, &base);
    let mut rows = Vec::new();
    for value in &values {
        let run_sets: Vec<String> = sets
            .iter()
            .cloned()
            .chain([format!("{key}={value}")])
            .collect();
        let config = load_config(config_path, &run_sets, seed)?;
        let run_dir = out_dir.join(value);
        write_manifest("ablate", config_path, &run_dir, &config)?;
        let outcome = train_to_dir(&config, &run_dir).map_err(CliFailure::from)?;
        println!("{key}={value}: final_eval={}", outcome.final_eval);
        rows.push((value.clone(), outcome.final_eval));
    }

    let mut csv = String::from("axis_value,final_eval_reward\n");
    for (value, reward) in &rows {
        csv.push_str(&format!("{value},{reward}\n"));
    }
    std::fs::write(out_dir.join("summary.csv"), csv).map_err(|e| other(e.to_string()))?;
    Ok(())
}

/// Negative-prompt source for the heatmap command. `Same` scores the
/// response against the positive prompt itself, which zeroes the raw
/// heatmap; useful as a pipeline sanity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapNegative {
    FromConfig,
    Strategy(NegPromptStrategy),
    Same,
}

impl std::str::FromStr for HeatmapNegative {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" => Ok(HeatmapNegative::Same),
            other => serde_json::from_value::<NegPromptStrategy>(serde_json::Value::String(
                other.to_string(),
            ))
            .map(HeatmapNegative::Strategy)
            .map_err(|_| format!("unknown negative `{other}`")),
        }
    }
}

/// Samples one rollout from a checkpoint, scores contrastive guidance on
/// it, and writes `heatmap.csv` plus, for grid tasks, `heatmap.pgm`.
/// Grid-task sampling masks EOS so the sample always fills the grid.
pub fn cmd_heatmap(
    config_path: &Path,
    checkpoint_path: &Path,
    out_dir: &Path,
    task_index: usize,
    negative: HeatmapNegative,
    sets: &[String],
    seed: Option<u64>,
) -> CliResult<()> {
    let config = load_config(config_path, sets, seed)?;
    write_manifest("heatmap", config_path, out_dir, &config)?;
    let ckpt = load_checkpoint_for(&config, checkpoint_path)?;
    let tasks = build_task_set(
        config.task,
        config.task_file.as_deref().map(Path::new),
        config.num_tasks,
        config.grid_height,
        config.grid_width,
        config.seed,
    )
    .map_err(CliFailure::from)?;
    if task_index >= tasks.len() {
        return Err(other(format!(
            "task index {task_index} out of range (set has {} tasks)",
            tasks.len()
        )));
    }
    let task = tasks.get(task_index);

    let neg = match negative {
        HeatmapNegative::FromConfig => {
            make_negative_prompt(&task.prompt, config.effective_neg_strategy())
                .map_err(CliFailure::from)?
        }
        HeatmapNegative::Strategy(strategy) => {
            make_negative_prompt(&task.prompt, strategy).map_err(CliFailure::from)?
        }
        HeatmapNegative::Same => {
            let mut p = task.prompt.clone();
            p.kind = PromptKind::Negative;
            p
        }
    };

    let mut rng = rand::SeedableRng::seed_from_u64(mix_seed(&[config.seed, 0x6865_6174]));
    let rng: &mut rand_chacha::ChaCha8Rng = &mut rng;
    let opts = SampleOptions {
        cfg_scale: config.cfg_scale,
        max_len: config.effective_max_len(),
        ban_eos: matches!(task.spec, TaskSpec::Grid(_)),
    };
    let mut rollout = sample_rollout_opts(
        &ckpt.params,
        &task.prompt,
        (config.cfg_scale > 0.0).then_some(&neg),
        opts,
        rng,
    )
    .map_err(CliFailure::from)?;
    rollout.prompt_id = task.id;

    let mut profile = score_guidance(&ckpt.params, &task.prompt, &neg, &rollout, config.metric)
        .map_err(CliFailure::from)?;
    let eta_norm =
        normalize(&profile.eta_raw, config.weighting()).map_err(CliFailure::from)?;
    profile.eta_norm = Some(eta_norm.clone());

    let csv_path = out_dir.join("heatmap.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| other(e.to_string()))?;
    write_profile_csv(std::io::BufWriter::new(file), &profile).map_err(CliFailure::from)?;
    println!("wrote {}", csv_path.display());

    if let TaskSpec::Grid(spec) = &task.spec {
        let pgm_path = out_dir.join("heatmap.pgm");
        let file = std::fs::File::create(&pgm_path).map_err(|e| other(e.to_string()))?;
        write_pgm(
            std::io::BufWriter::new(file),
            &eta_norm,
            spec.width,
            spec.height,
        )
        .map_err(CliFailure::from)?;
        println!("wrote {}", pgm_path.display());
    }
    Ok(())
}

/// Writes the generated task set for a config, so runs can be repeated from
/// an explicit file.
pub fn cmd_dump_tasks(config_path: &Path, out: &Path, sets: &[String]) -> CliResult<()> {
    let config = load_config(config_path, sets, None)?;
    let tasks = build_task_set(
        config.task,
        config.task_file.as_deref().map(Path::new),
        config.num_tasks,
        config.grid_height,
        config.grid_width,
        config.seed,
    )
    .map_err(CliFailure::from)?;
    tasks.save(out).map_err(CliFailure::from)?;
    println!("wrote {} tasks to {}", tasks.len(), out.display());
    Ok(())
}

pub fn resolved_config_hash(config: &TrainConfig) -> String {
    config_hash(config)
}
