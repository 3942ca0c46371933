//! `shishu generate`: prompt continuation.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use shishu::model::{generate, load_checkpoint, Sampling};
use shishu::train::{byte_tokens, detokenize};

use crate::source::read_bytes;

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["prompt", "prompt_file"])))]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prompt text.
    #[arg(long)]
    pub prompt: Option<String>,
    /// File holding the prompt text.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// Number of tokens to generate.
    #[arg(short = 'n', long = "tokens", default_value_t = 64)]
    pub tokens: usize,
    /// Sampling temperature; 0 selects the most likely token.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: GenerateArgs) -> anyhow::Result<()> {
    let prompt = match (&args.prompt, &args.prompt_file) {
        (Some(text), _) => text.as_bytes().to_vec(),
        (None, Some(path)) => read_bytes(path)?,
        (None, None) => unreachable!("clap requires one prompt source"),
    };
    let (_, model) = load_checkpoint::<f32>(&args.checkpoint)?;
    let sampling = Sampling {
        temperature: args.temperature,
        top_k: args.top_k,
        seed: args.seed,
    };
    let tokens = generate(&model, &byte_tokens(&prompt), args.tokens, &sampling)
        .with_context(|| format!("generating from {}", args.checkpoint.display()))?;
    let mut out = std::io::stdout().lock();
    out.write_all(detokenize(&tokens).as_bytes())?;
    out.flush()?;
    Ok(())
}
