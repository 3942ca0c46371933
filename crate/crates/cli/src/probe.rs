//! `shishu probe`: linear fits of attention sub-layer input/output pairs.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use shishu::model::load_checkpoint;
use shishu::probe::{collect_io_pairs, probe_report, CosineMode, ProbeOptions};
use shishu::report::Provenance;
use shishu::train::byte_tokens;

use crate::output::{ensure_dir, write_csv, write_empty_csv};
use crate::source::{read_bytes, stem};

pub const DEFAULT_LENGTHS: [usize; 4] = [54, 118, 246, 502];
pub const DEFAULT_GENERATE: usize = 10;
pub const COLUMNS: [&str; 7] = [
    "layer",
    "rows_fit",
    "linear_mse",
    "cosine_mean",
    "cosine_mode",
    "alpha",
    "scalar_mse",
];

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CosineArg {
    /// Cosine between the attention output and its input.
    Empirical,
    /// Cosine between the fitted map's output and its input.
    Fitted,
}

impl From<CosineArg> for CosineMode {
    fn from(arg: CosineArg) -> Self {
        match arg {
            CosineArg::Empirical => CosineMode::Empirical,
            CosineArg::Fitted => CosineMode::Fitted,
        }
    }
}

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text whose leading bytes form each prompt.
    #[arg(long)]
    pub prompt_file: PathBuf,
    /// Prompt lengths in tokens.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LENGTHS)]
    pub lengths: Vec<usize>,
    /// Tokens generated after each prompt.
    #[arg(short = 'b', long = "generate", default_value_t = DEFAULT_GENERATE)]
    pub generate: usize,
    /// Fit on prompt and generated rows instead of prompt rows only.
    #[arg(long)]
    pub fit_generated: bool,
    #[arg(long, value_enum, default_value_t = CosineArg::Empirical)]
    pub cosine_mode: CosineArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: ProbeArgs) -> anyhow::Result<()> {
    let prompt_bytes = read_bytes(&args.prompt_file)?;
    let (config, model) = load_checkpoint::<f64>(&args.checkpoint)?;
    let tokens = byte_tokens(&prompt_bytes);
    let name = stem(&args.checkpoint);
    let options = ProbeOptions {
        fit_generated: args.fit_generated,
        cosine_mode: args.cosine_mode.into(),
    };
    let has_attention = config.schedule.num_decoders() > 0;
    ensure_dir(&args.out_dir)?;
    let mut written = 0;
    for &len in &args.lengths {
        if len > tokens.len() {
            eprintln!(
                "warning: skipping length {len}: prompt file holds only {} tokens",
                tokens.len()
            );
            continue;
        }
        if len == 0 || len + args.generate > config.max_seq_len {
            eprintln!(
                "warning: skipping length {len}: {len} + {} tokens do not fit in 1..={}",
                args.generate, config.max_seq_len
            );
            continue;
        }
        let provenance = Provenance::new(None, &config.to_toml())
            .with_note(format!(
                "model={name} prompt_len={len} generated={}",
                args.generate
            ))
            .with_note(format!(
                "fit_window={} cosine_mode={}",
                if args.fit_generated { "all" } else { "prompt" },
                options.cosine_mode
            ));
        let dest = args.out_dir.join(format!("probe_{name}_len{len}.csv"));
        if !has_attention {
            write_empty_csv(
                &dest,
                &provenance.with_note("no attention layers"),
                &COLUMNS,
            )?;
        } else {
            let capture = collect_io_pairs(&model, &tokens[..len], args.generate)?;
            let report = probe_report(&capture, options)?;
            write_csv(&dest, &provenance, &report.rows)?;
        }
        written += 1;
    }
    println!(
        "wrote {written} probe report(s) to {}",
        args.out_dir.display()
    );
    Ok(())
}
