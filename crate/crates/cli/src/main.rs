use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gcpo_cli::{
    cmd_ablate, cmd_dump_tasks, cmd_eval, cmd_heatmap, cmd_train, AblationAxis, HeatmapNegative,
};

/// Experiment runner for group-relative policy optimization with
/// contrastive-guidance token weighting.
///
/// The `GCPO_LAB_THREADS` environment variable caps rollout parallelism
/// (unset or 0: one worker per core). All randomness flows from the config
/// seed; there are no hidden entropy sources.
#[derive(Parser)]
#[command(name = "gcpo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, checkpoints, and rollout dumps.
    Train {
        /// JSON config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. --set steps=50 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on its task set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one training per value of an ablation axis and summarize.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// metric | normalization | negative_prompt | algorithm
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample one rollout from a checkpoint and export its guidance heatmap.
    Heatmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Index into the task set.
        #[arg(long, default_value_t = 0)]
        task_index: usize,
        /// Negative prompt override: a strategy name, or `same` to score
        /// against the positive prompt itself (zero heatmap).
        #[arg(long)]
        negative: Option<HeatmapNegative>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the config's task set to a JSON file.
    DumpTasks {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            set,
            seed,
        } => cmd_train(&config, &out, &set, seed),
        Command::Eval {
            config,
            checkpoint,
            out,
            set,
            seed,
        } => cmd_eval(&config, &checkpoint, out.as_deref(), &set, seed),
        Command::Ablate {
            config,
            axis,
            out,
            set,
            seed,
        } => cmd_ablate(&config, axis, &out, &set, seed),
        Command::Heatmap {
            config,
            checkpoint,
            out,
            task_index,
            negative,
            set,
            seed,
        } => cmd_heatmap(
            &config,
            &checkpoint,
            &out,
            task_index,
            negative.unwrap_or(HeatmapNegative::FromConfig),
            &set,
            seed,
        ),
        Command::DumpTasks { config, out, set } => cmd_dump_tasks(&config, &out, &set),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code.clamp(0, 255) as u8)
        }
    }
}
