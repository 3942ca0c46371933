//! `shishu eval`: corpus perplexity of a checkpoint.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use shishu::model::load_checkpoint;
use shishu::report::{config_hash, csv_string, Provenance};
use shishu::train::{eval_loss, CorpusDataset};

use crate::output::{ensure_dir, write_atomic};
use crate::source::{read_bytes, stem};

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Tokens per evaluated block; defaults to min(256, max_seq_len).
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Evaluate only the first this many blocks.
    #[arg(long)]
    pub max_blocks: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub micro_batch: usize,
    /// Also write `eval.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalRow {
    blocks: usize,
    tokens: usize,
    loss: f64,
    perplexity: f64,
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let corpus = read_bytes(&args.corpus)?;
    let (config, model) = load_checkpoint::<f32>(&args.checkpoint)?;
    let block = args.block_size.unwrap_or(config.max_seq_len.min(256));
    let data = CorpusDataset::from_bytes(&corpus, block, 0)?;
    let blocks = args
        .max_blocks
        .map_or(data.num_train_blocks(), |m| m.min(data.num_train_blocks()));
    if blocks == 0 {
        anyhow::bail!("no blocks to evaluate");
    }
    let loss = eval_loss(
        &model,
        (0..blocks).map(|i| data.train_example(i)),
        args.micro_batch,
    )?;
    let row = EvalRow {
        blocks,
        tokens: blocks * block,
        loss,
        perplexity: loss.exp(),
    };
    let provenance = Provenance::new(None, &config.to_toml()).with_note(format!(
        "model={} corpus={} block_size={block}",
        stem(&args.checkpoint),
        config_hash(&String::from_utf8_lossy(&corpus))
    ));
    let text = csv_string(&provenance, &[row])?;
    print!("{text}");
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        write_atomic(&dir.join("eval.csv"), text.as_bytes())?;
    }
    Ok(())
}
