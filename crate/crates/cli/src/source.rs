//! Loading configurations, presets and checkpoints.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use shishu::model::checkpoint::{decode_checkpoint, MAGIC};
use shishu::train::TrainConfig;
use shishu::{ModelConfig, ModelWeights};

/// A `[model]` plus `[train]` configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = read_text(path)?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_bytes(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub const PRESETS: [&str; 4] = [
    "mobilellm-125m",
    "mobilellm-600m",
    "shishulm-125",
    "shishulm-600",
];

pub fn preset(name: &str) -> Option<ModelConfig> {
    match name {
        "mobilellm-125m" => Some(ModelConfig::mobilellm_125m()),
        "mobilellm-600m" => Some(ModelConfig::mobilellm_600m()),
        "shishulm-125" => Some(ModelConfig::shishulm_125()),
        "shishulm-600" => Some(ModelConfig::shishulm_600()),
        _ => None,
    }
}

/// A model named on the command line: a preset, a checkpoint, a model
/// configuration file or a run configuration file.
pub struct ModelSource {
    pub config: ModelConfig,
    pub weights: Option<ModelWeights<f32>>,
}

impl ModelSource {
    pub fn resolve(arg: &str) -> anyhow::Result<Self> {
        let path = Path::new(arg);
        if !path.exists() {
            if let Some(config) = preset(arg) {
                return Ok(Self {
                    config,
                    weights: None,
                });
            }
            bail!(
                "{arg} is neither a file nor a preset ({})",
                PRESETS.join(", ")
            );
        }
        let bytes = read_bytes(path)?;
        if bytes.starts_with(MAGIC) {
            let (config, weights) = decode_checkpoint::<f32>(&bytes, path)?;
            return Ok(Self {
                config,
                weights: Some(weights),
            });
        }
        let text = String::from_utf8(bytes)
            .with_context(|| format!("{} is not UTF-8 text", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let config = if table.contains_key("model") {
            toml::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
                .model
        } else {
            ModelConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(Self {
            config,
            weights: None,
        })
    }

    /// The stored weights, or fresh ones drawn from `seed`.
    pub fn into_weights(self, seed: u64) -> anyhow::Result<ModelWeights<f32>> {
        match self.weights {
            Some(w) => Ok(w),
            None => Ok(ModelWeights::build(&self.config, seed)?),
        }
    }
}

/// File stem used to label outputs derived from a checkpoint.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// Command-line overrides of [`TrainConfig`] fields.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainOverrides {
    /// Seed for initialization and data order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, alias = "steps")]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub val_blocks: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> anyhow::Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            seed,
            learning_rate,
            total_steps,
            batch_size,
            micro_batch,
            block_size,
            warmup_ratio,
            weight_decay,
            eval_interval,
            val_blocks
        );
        if self.grad_clip.is_some() {
            cfg.grad_clip = self.grad_clip;
        }
        if self.checkpoint_interval.is_some() {
            cfg.checkpoint_interval = self.checkpoint_interval;
        }
        cfg.validate()?;
        Ok(())
    }
}

/// Resolves `path` relative to the directory holding `base_file`.
pub fn relative_to(base_file: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    base_file.parent().unwrap_or(Path::new(".")).join(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_when_no_file_exists() {
        let src = ModelSource::resolve("mobilellm-125m").unwrap();
        assert_eq!(shishu::model::count_parameters(&src.config), 124_635_456);
        assert!(ModelSource::resolve("no-such-thing").is_err());
    }

    #[test]
    fn run_config_round_trips() {
        let cfg = RunConfig {
            model: ModelConfig::tiny("D D S0 S0".parse().unwrap()),
            train: TrainConfig::default(),
        };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<RunConfig>("[model]\nhidden_size = 1\n[extra]\n").is_err());
    }

    #[test]
    fn overrides_replace_fields() {
        let mut cfg = TrainConfig::default();
        let o = TrainOverrides {
            total_steps: Some(5),
            seed: Some(9),
            ..TrainOverrides::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!((cfg.total_steps, cfg.seed), (5, 9));
        let bad = TrainOverrides {
            micro_batch: Some(7),
            ..TrainOverrides::default()
        };
        assert!(bad.apply(&mut cfg).is_err());
    }
}
