//! `shishu emd`: adjacent-layer MLP weight similarity.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use shishu::emd::{r_scores, DEFAULT_MAX_SAMPLES};
use shishu::model::load_checkpoint;
use shishu::report::Provenance;

use crate::output::{ensure_dir, write_atomic, write_csv};
use crate::source::stem;

#[derive(Args)]
pub struct EmdArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Largest number of weights drawn from each matrix.
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    pub max_samples: usize,
    /// Seed of the weight subsample.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: EmdArgs) -> anyhow::Result<()> {
    let (config, model) = load_checkpoint::<f32>(&args.checkpoint)?;
    let report = r_scores(&model, args.max_samples, args.seed)?;
    let provenance = Provenance::new(Some(args.seed), &config.to_toml()).with_note(format!(
        "model={} max_samples={}",
        stem(&args.checkpoint),
        args.max_samples
    ));
    ensure_dir(&args.out_dir)?;
    write_csv(&args.out_dir.join("emd.csv"), &provenance, &report.rows())?;
    let summary = report.summary();
    write_csv(&args.out_dir.join("emd_summary.csv"), &provenance, &summary)?;
    for family in &report.families {
        let mut header = Vec::new();
        provenance
            .clone()
            .with_note(format!("family={}", family.family.name()))
            .write_to(&mut header)?;
        let mut text = String::from_utf8(header)?;
        text.push_str("layer");
        for l in &report.layers {
            write!(text, ",{l}")?;
        }
        text.push('\n');
        for (row, l) in family.matrix.iter().zip(&report.layers) {
            write!(text, "{l}")?;
            for v in row {
                write!(text, ",{v}")?;
            }
            text.push('\n');
        }
        let dest = args
            .out_dir
            .join(format!("emd_matrix_{}.csv", family.family.name()));
        write_atomic(&dest, text.as_bytes())?;
    }
    for row in &summary {
        println!(
            "{} r_max_x100={}",
            row.family,
            row.r_max_x100
                .map_or("undefined".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}
