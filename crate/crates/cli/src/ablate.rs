//! `shishu ablate`: trains a grid of layer layouts under one budget.
//!
//! Each entry trains in its own directory from the same seed and corpus. A
//! finished entry leaves a `DONE` marker holding its summary row, so a rerun
//! skips it and reproduces the same summary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use shishu::model::SchedulePlan;
use shishu::report::{config_hash, Provenance};
use shishu::train::TrainConfig;
use shishu::ModelConfig;

use crate::output::{ensure_dir, write_atomic, write_csv};
use crate::source::{read_bytes, read_text, relative_to, RunConfig, TrainOverrides};
use crate::train::{check_fits, run_training, train_provenance};

pub const MARKER_FILE: &str = "DONE";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Grid specification file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    /// Corpus path, relative to the spec file.
    pub corpus: Option<PathBuf>,
    /// Output directory, relative to the spec file.
    pub out_dir: Option<PathBuf>,
    /// When set, every entry must have exactly this many layers.
    pub num_layers: Option<usize>,
    /// Model fields shared by all entries, without `layers`.
    pub model: toml::Table,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(rename = "entry")]
    pub entries: Vec<EntrySpec>,
}

/// One layout: decoders at the bottom, MLP-only layers, decoders on top.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub name: Option<String>,
    pub bottom_decoders: usize,
    #[serde(default)]
    pub shishu_layers: usize,
    #[serde(default)]
    pub top_decoders: usize,
    /// Consecutive MLP-only layers sharing weights; 1 disables sharing.
    #[serde(default = "default_pair_size")]
    pub pair_size: usize,
}

fn default_pair_size() -> usize {
    2
}

impl EntrySpec {
    pub fn num_layers(&self) -> usize {
        self.bottom_decoders + self.shishu_layers + self.top_decoders
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "b{}-s{}-t{}-p{}",
                self.bottom_decoders, self.shishu_layers, self.top_decoders, self.pair_size
            )
        })
    }

    fn model_config(&self, base: &toml::Table) -> anyhow::Result<ModelConfig> {
        if base.contains_key("layers") {
            bail!("[model] in an ablation spec must not set `layers`; entries define them");
        }
        let plan = SchedulePlan {
            num_layers: self.num_layers(),
            bottom_decoders: self.bottom_decoders,
            top_decoders: self.top_decoders,
            pair_size: self.pair_size,
        };
        let mut table = base.clone();
        table.insert("layers".into(), toml::Value::try_from(plan)?);
        Ok(toml::Value::Table(table).try_into()?)
    }
}

/// One summary row; also the contents of an entry's `DONE` marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub index: usize,
    pub name: String,
    pub bottom_decoders: usize,
    pub shishu_layers: usize,
    pub top_decoders: usize,
    pub pair_size: usize,
    pub parameters: Option<usize>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub perplexity: Option<f64>,
    pub status: String,
}

impl SummaryRow {
    fn new(index: usize, entry: &EntrySpec, status: impl Into<String>) -> Self {
        Self {
            index,
            name: entry.label(),
            bottom_decoders: entry.bottom_decoders,
            shishu_layers: entry.shishu_layers,
            top_decoders: entry.top_decoders,
            pair_size: entry.pair_size,
            parameters: None,
            train_loss: None,
            val_loss: None,
            perplexity: None,
            status: status.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Marker {
    config_hash: String,
    row: SummaryRow,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Grid specification file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Corpus; overrides the spec's `corpus`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory; overrides the spec's `out_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Train at most this many unfinished entries, then stop.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn entry_dir(out_dir: &Path, index: usize, entry: &EntrySpec) -> PathBuf {
    out_dir.join(format!("{:02}-{}", index, slug(&entry.label())))
}

/// `failed: <message>` on a single line.
fn failure_status(err: &anyhow::Error) -> String {
    let msg = format!("{err:#}");
    format!(
        "failed: {}",
        msg.split_whitespace().collect::<Vec<_>>().join(" ")
    )
}

fn read_marker(dir: &Path, hash: &str) -> Option<SummaryRow> {
    let text = std::fs::read_to_string(dir.join(MARKER_FILE)).ok()?;
    let marker: Marker = toml::from_str(&text).ok()?;
    (marker.config_hash == hash).then_some(marker.row)
}

pub fn run(args: AblateArgs) -> anyhow::Result<()> {
    let spec_text = read_text(&args.spec)?;
    let mut spec: AblationSpec =
        toml::from_str(&spec_text).with_context(|| format!("parsing {}", args.spec.display()))?;
    args.overrides.apply(&mut spec.train)?;
    if spec.entries.is_empty() {
        bail!("{} lists no [[entry]] tables", args.spec.display());
    }
    let corpus_path = match (&args.corpus, &spec.corpus) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => relative_to(&args.spec, p),
        (None, None) => bail!("no corpus given on the command line or in the spec"),
    };
    let out_dir = match (&args.out_dir, &spec.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => relative_to(&args.spec, p),
        (None, None) => bail!("no output directory given on the command line or in the spec"),
    };
    let corpus = read_bytes(&corpus_path)?;

    let runs: Vec<anyhow::Result<RunConfig>> = spec
        .entries
        .iter()
        .map(|entry| {
            if let Some(total) = spec.num_layers {
                if entry.num_layers() != total {
                    bail!(
                        "entry has {} layers, the spec requires {total}",
                        entry.num_layers()
                    );
                }
            }
            let run = RunConfig {
                model: entry.model_config(&spec.model)?,
                train: spec.train.clone(),
            };
            check_fits(&run.model, &run.train)?;
            Ok(run)
        })
        .collect();

    ensure_dir(&out_dir)?;
    let grid_text = format!("{}\n{}", spec_text, spec.train.to_toml());
    let provenance = Provenance::new(Some(spec.train.seed), &grid_text).with_note(format!(
        "corpus={}",
        config_hash(&String::from_utf8_lossy(&corpus))
    ));
    let mut rows: Vec<SummaryRow> = spec
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| SummaryRow::new(i, e, "pending"))
        .collect();
    let mut budget = args.limit.unwrap_or(usize::MAX);
    let mut failures = 0;
    for (i, (entry, run)) in spec.entries.iter().zip(&runs).enumerate() {
        let dir = entry_dir(&out_dir, i, entry);
        let run = match run {
            Ok(run) => run,
            Err(e) => {
                eprintln!("entry {i} ({}) is invalid: {e:#}", entry.label());
                rows[i].status = failure_status(e);
                failures += 1;
                continue;
            }
        };
        let hash = config_hash(&run.to_toml());
        if let Some(done) = read_marker(&dir, &hash) {
            rows[i] = done;
            continue;
        }
        if budget == 0 {
            continue;
        }
        budget -= 1;
        eprintln!(
            "training entry {i} ({}): {} layers",
            entry.label(),
            run.model.num_layers()
        );
        match run_training(run, &corpus, &dir, false, &train_provenance(run, &corpus)) {
            Ok(outcome) => {
                let row = SummaryRow {
                    parameters: Some(outcome.parameters),
                    train_loss: Some(outcome.tail_train_loss),
                    val_loss: outcome.summary.final_val_loss,
                    perplexity: outcome.summary.final_val_loss.map(f64::exp),
                    status: "ok".into(),
                    ..SummaryRow::new(i, entry, "")
                };
                let marker = toml::to_string(&Marker {
                    config_hash: hash,
                    row: row.clone(),
                })?;
                write_atomic(&dir.join(MARKER_FILE), marker.as_bytes())?;
                rows[i] = row;
            }
            Err(e) => {
                eprintln!("entry {i} ({}) failed: {e:#}", entry.label());
                rows[i].status = failure_status(&e);
                failures += 1;
            }
        }
        write_csv(&out_dir.join(SUMMARY_FILE), &provenance, &rows)?;
    }
    write_csv(&out_dir.join(SUMMARY_FILE), &provenance, &rows)?;
    let pending = rows.iter().filter(|r| r.status == "pending").count();
    println!(
        "{} entries: {} done, {pending} pending, {failures} failed; summary in {}",
        rows.len(),
        rows.len() - pending - failures,
        out_dir.join(SUMMARY_FILE).display()
    );
    if failures > 0 {
        bail!("{failures} of {} entries failed", rows.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> toml::Table {
        toml::from_str(
            "hidden_size = 64\nintermediate_size = 192\nnum_attention_heads = 4\nnum_kv_heads = 2\nvocab_size = 256\nmax_seq_len = 64\n",
        )
        .unwrap()
    }

    #[test]
    fn entries_build_layouts() {
        let e = EntrySpec {
            name: None,
            bottom_decoders: 2,
            shishu_layers: 4,
            top_decoders: 1,
            pair_size: 2,
        };
        let cfg = e.model_config(&base()).unwrap();
        assert_eq!(cfg.schedule.to_string(), "D D S0 S0 S1 S1 D");
        let unshared = EntrySpec {
            pair_size: 1,
            shishu_layers: 3,
            top_decoders: 0,
            ..e.clone()
        };
        assert_eq!(
            unshared
                .model_config(&base())
                .unwrap()
                .schedule
                .num_groups(),
            3
        );
        assert_eq!(e.label(), "b2-s4-t1-p2");
    }

    #[test]
    fn layers_key_in_base_is_rejected() {
        let mut b = base();
        b.insert("layers".into(), "D".into());
        let e = EntrySpec {
            name: Some("x".into()),
            bottom_decoders: 1,
            shishu_layers: 0,
            top_decoders: 0,
            pair_size: 2,
        };
        assert!(e.model_config(&b).is_err());
    }

    #[test]
    fn marker_round_trips_floats_exactly() {
        let row = SummaryRow {
            train_loss: Some(0.1 + 0.2),
            val_loss: Some(std::f64::consts::PI),
            perplexity: None,
            parameters: Some(7),
            status: "ok".into(),
            ..SummaryRow::new(
                0,
                &EntrySpec {
                    name: Some("4+8".into()),
                    bottom_decoders: 4,
                    shishu_layers: 8,
                    top_decoders: 0,
                    pair_size: 1,
                },
                "",
            )
        };
        let text = toml::to_string(&Marker {
            config_hash: "h".into(),
            row: row.clone(),
        })
        .unwrap();
        let back: Marker = toml::from_str(&text).unwrap();
        assert_eq!(back.row, row);
        assert_eq!(slug("4+8"), "4_8");
    }
}
