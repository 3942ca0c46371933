//! `shishu bench`: latency and memory of a parent model against a pruned one.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use shishu::bench::{
    latency_rows, memory_rows, time_model, BenchConfig, BenchMode, ScoreStorage, DEFAULT_LENGTHS,
    DEFAULT_REPS, DEFAULT_WARMUP,
};
use shishu::report::Provenance;

use crate::output::{ensure_dir, write_csv};
use crate::source::ModelSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Inference,
    Training,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<BenchMode> {
        match self {
            ModeArg::Inference => vec![BenchMode::Inference],
            ModeArg::Training => vec![BenchMode::Training],
            ModeArg::Both => vec![BenchMode::Inference, BenchMode::Training],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoresArg {
    /// Attention probabilities stored as full matrices.
    Materialized,
    /// Fused attention that never stores the score matrix.
    Streaming,
}

impl From<ScoresArg> for ScoreStorage {
    fn from(arg: ScoresArg) -> Self {
        match arg {
            ScoresArg::Materialized => ScoreStorage::Materialized,
            ScoresArg::Streaming => ScoreStorage::Streaming,
        }
    }
}

#[derive(Args)]
pub struct BenchArgs {
    /// Parent model: checkpoint, configuration file or preset name.
    #[arg(long)]
    pub parent: String,
    /// Pruned model: checkpoint, configuration file or preset name.
    #[arg(long)]
    pub shishu: String,
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LENGTHS)]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ScoresArg::Materialized)]
    pub scores: ScoresArg,
    /// Skip timing and write only the analytic memory table.
    #[arg(long)]
    pub memory_only: bool,
    /// Seed for weights built from a configuration and for benchmark tokens.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: BenchArgs) -> anyhow::Result<()> {
    let parent = ModelSource::resolve(&args.parent)?;
    let shishu = ModelSource::resolve(&args.shishu)?;
    let config_text = format!("{}\n{}", parent.config.to_toml(), shishu.config.to_toml());
    let provenance = Provenance::new(Some(args.seed), &config_text).with_note(format!(
        "parent={} shishu={} batch={}",
        args.parent, args.shishu, args.batch
    ));
    let scores = ScoreStorage::from(args.scores);
    let modes = args.mode.modes();

    let mut memory = Vec::new();
    for &mode in &modes {
        memory.extend(memory_rows(
            mode,
            &parent.config,
            &shishu.config,
            args.batch,
            &args.lengths,
            scores,
        )?);
    }

    let mut latency = Vec::new();
    if !args.memory_only {
        let (parent_model, shishu_model) = (
            parent.into_weights(args.seed)?,
            shishu.into_weights(args.seed)?,
        );
        for &mode in &modes {
            let cfg = BenchConfig {
                lengths: args.lengths.clone(),
                batch: args.batch,
                warmup: args.warmup,
                reps: args.reps,
                mode,
                seed: args.seed,
            };
            let p = time_model(&parent_model, &cfg)?;
            let s = time_model(&shishu_model, &cfg)?;
            latency.extend(latency_rows(mode, &p, &s)?);
        }
    }

    ensure_dir(&args.out_dir)?;
    let memory_note = format!(
        "scores={}",
        if scores == ScoreStorage::Streaming {
            "streaming"
        } else {
            "materialized"
        }
    );
    write_csv(
        &args.out_dir.join("memory.csv"),
        &provenance.clone().with_note(memory_note),
        &memory,
    )?;
    if !args.memory_only {
        let timing_note = format!("warmup={} reps={} statistic=median", args.warmup, args.reps);
        write_csv(
            &args.out_dir.join("latency.csv"),
            &provenance.with_note(timing_note),
            &latency,
        )?;
        for row in &latency {
            println!(
                "{} T={} parent_ms={:.3} shishu_ms={:.3} reduction={:.1}%",
                row.mode.name(),
                row.length,
                row.parent_ms,
                row.shishu_ms,
                row.pct_reduction
            );
        }
    }
    Ok(())
}
