//! `shishu train`: byte-level pre-training with a metrics log and checkpoints.

use std::path::{Path, PathBuf};

use clap::Args;
use shishu::model::save_checkpoint;
use shishu::report::{config_hash, CsvLog, Provenance};
use shishu::train::{train, CorpusDataset, StepMetrics, TrainConfig, TrainSummary};
use shishu::{ModelConfig, ModelWeights};

use crate::output::{ensure_dir, write_atomic, AtomicFile};
use crate::source::{read_bytes, RunConfig, TrainOverrides};

#[derive(Args)]
pub struct TrainArgs {
    /// Configuration with `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: PathBuf,
    /// Plain text training corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Record elapsed wall-clock time in the metrics log.
    #[arg(long)]
    pub wall_clock: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

/// Result of one completed run.
pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub parameters: usize,
    /// Mean training loss over the last tenth of the steps.
    pub tail_train_loss: f64,
}

/// Trains a fresh model and writes `metrics.csv`, `model.ckpt` and
/// `config.toml` (plus interval checkpoints) into `out_dir`.
pub fn run_training(
    run: &RunConfig,
    corpus: &[u8],
    out_dir: &Path,
    wall_clock: bool,
    provenance: &Provenance,
) -> anyhow::Result<TrainOutcome> {
    let cfg: &TrainConfig = &run.train;
    let data = CorpusDataset::from_bytes(corpus, cfg.block_size, cfg.val_blocks)?;
    let mut model = ModelWeights::<f32>::build(&run.model, cfg.seed)?;
    ensure_dir(out_dir)?;
    let mut log = CsvLog::new(AtomicFile::create(out_dir.join(METRICS_FILE))?, provenance)?;
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let summary = train(
        &mut model,
        &data,
        cfg,
        |metrics: &StepMetrics, weights: &ModelWeights<f32>| {
            let row = StepMetrics {
                wall_ms: metrics.wall_ms.filter(|_| wall_clock),
                ..metrics.clone()
            };
            log.row(&row)?;
            losses.push(metrics.train_loss);
            if let Some(every) = cfg.checkpoint_interval {
                if every > 0 && metrics.step.is_multiple_of(every) && metrics.step < cfg.total_steps
                {
                    save_checkpoint(
                        weights,
                        out_dir.join(format!("checkpoint-{:06}.ckpt", metrics.step)),
                    )?;
                }
            }
            Ok(())
        },
    )?;
    save_checkpoint(&model, out_dir.join(CHECKPOINT_FILE))?;
    write_atomic(&out_dir.join(CONFIG_FILE), run.to_toml().as_bytes())?;
    log.into_inner()?.commit()?;
    let tail = (losses.len() / 10).max(1);
    let tail_train_loss = losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(TrainOutcome {
        summary,
        parameters: model.num_parameters(),
        tail_train_loss,
    })
}

/// Provenance of a training run: seed, configuration hash and corpus hash.
pub fn train_provenance(run: &RunConfig, corpus: &[u8]) -> Provenance {
    let corpus_text = String::from_utf8_lossy(corpus);
    Provenance::new(Some(run.train.seed), &run.to_toml())
        .with_note(format!("corpus={}", config_hash(&corpus_text)))
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let mut run = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut run.train)?;
    check_fits(&run.model, &run.train)?;
    let corpus = read_bytes(&args.corpus)?;
    // fails on a too-small corpus before any output exists
    CorpusDataset::from_bytes(&corpus, run.train.block_size, run.train.val_blocks)?;
    let provenance = train_provenance(&run, &corpus);
    let outcome = run_training(&run, &corpus, &args.out_dir, args.wall_clock, &provenance)?;
    let s = outcome.summary;
    println!(
        "steps={} params={} first_train_loss={:.4} final_train_loss={:.4} final_val_loss={}",
        s.steps,
        outcome.parameters,
        s.first_train_loss,
        s.final_train_loss,
        s.final_val_loss.map_or("-".into(), |v| format!("{v:.4}")),
    );
    Ok(())
}

/// Rejects block sizes the model cannot attend over.
pub fn check_fits(model: &ModelConfig, train: &TrainConfig) -> anyhow::Result<()> {
    if train.block_size > model.max_seq_len {
        anyhow::bail!(
            "block size {} exceeds max_seq_len {}",
            train.block_size,
            model.max_seq_len
        );
    }
    Ok(())
}
