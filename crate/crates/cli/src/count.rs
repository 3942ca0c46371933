//! `shishu count-params`.

use clap::Args;
use shishu::model::parameter_breakdown;

use crate::source::ModelSource;

#[derive(Args)]
pub struct CountArgs {
    /// Configuration file, checkpoint or preset name
    /// (mobilellm-125m, mobilellm-600m, shishulm-125, shishulm-600).
    #[arg(long)]
    pub config: String,
    /// Also print the per-component split.
    #[arg(long)]
    pub breakdown: bool,
}

pub fn run(args: CountArgs) -> anyhow::Result<()> {
    let source = ModelSource::resolve(&args.config)?;
    let parts = parameter_breakdown(&source.config);
    println!("{}", parts.total());
    if args.breakdown {
        println!("embedding {}", parts.embedding);
        println!("decoders {}", parts.decoders);
        println!("shishu_groups {}", parts.shishu_groups);
        println!("final_norm {}", parts.final_norm);
        println!("lm_head {}", parts.lm_head);
    }
    Ok(())
}
