use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::schedule::LayerSchedule;

/// Architecture hyperparameters plus the per-layer plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigRepr", into = "ConfigRepr")]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub num_attention_heads: usize,
    pub num_kv_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rms_norm_eps: f64,
    pub rope_theta: f64,
    pub tie_embeddings: bool,
    pub schedule: LayerSchedule,
}

pub const DEFAULT_RMS_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_ROPE_THETA: f64 = 10_000.0;

impl ModelConfig {
    pub fn num_layers(&self) -> usize {
        self.schedule.len()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }

    /// Width of the key (and value) projection: `num_kv_heads · head_dim`.
    pub fn kv_dim(&self) -> usize {
        self.num_kv_heads * self.head_dim()
    }

    /// Query heads served by each key/value head.
    pub fn kv_group_size(&self) -> usize {
        self.num_attention_heads / self.num_kv_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("num_attention_heads", self.num_attention_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            )));
        }
        if !self.num_attention_heads.is_multiple_of(self.num_kv_heads) {
            return Err(Error::Config(format!(
                "num_attention_heads {} is not divisible by num_kv_heads {}",
                self.num_attention_heads, self.num_kv_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head_dim {} must be even for rotary embeddings",
                self.head_dim()
            )));
        }
        if !(self.rms_norm_eps >= 0.0 && self.rms_norm_eps.is_finite()) {
            return Err(Error::Config("rms_norm_eps must be finite and >= 0".into()));
        }
        if !(self.rope_theta > 0.0 && self.rope_theta.is_finite()) {
            return Err(Error::Config("rope_theta must be positive".into()));
        }
        Ok(())
    }

    /// Parses the TOML text form (see [`ModelConfig::to_toml`]).
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical TOML text with an explicit layer list.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn base(
        hidden_size: usize,
        intermediate_size: usize,
        heads: usize,
        kv_heads: usize,
        schedule: LayerSchedule,
    ) -> Self {
        Self {
            hidden_size,
            intermediate_size,
            num_attention_heads: heads,
            num_kv_heads: kv_heads,
            vocab_size: 32_000,
            max_seq_len: 2048,
            rms_norm_eps: DEFAULT_RMS_NORM_EPS,
            rope_theta: DEFAULT_ROPE_THETA,
            tie_embeddings: true,
            schedule,
        }
    }

    /// 30-layer, 576-wide plain decoder stack (MobileLLM-125M shape).
    pub fn mobilellm_125m() -> Self {
        Self::base(576, 1536, 9, 3, LayerSchedule::all_decoder(30).unwrap())
    }

    /// 40-layer, 1152-wide plain decoder stack (MobileLLM-600M shape).
    pub fn mobilellm_600m() -> Self {
        Self::base(1152, 3072, 18, 6, LayerSchedule::all_decoder(40).unwrap())
    }

    /// 10 decoders + 10 shared pairs on the 125M widths.
    pub fn shishulm_125() -> Self {
        Self::base(576, 1536, 9, 3, LayerSchedule::shishu(30, 10, 2).unwrap())
    }

    /// 13 decoders + 15 shared pairs on the 600M widths.
    pub fn shishulm_600() -> Self {
        Self::base(1152, 3072, 18, 6, LayerSchedule::shishu(43, 13, 2).unwrap())
    }

    /// Small byte-level configuration used for desk-scale experiments.
    pub fn tiny(schedule: LayerSchedule) -> Self {
        Self {
            hidden_size: 64,
            intermediate_size: 192,
            num_attention_heads: 4,
            num_kv_heads: 2,
            vocab_size: 256,
            max_seq_len: 256,
            rms_norm_eps: DEFAULT_RMS_NORM_EPS,
            rope_theta: DEFAULT_ROPE_THETA,
            tie_embeddings: true,
            schedule,
        }
    }
}

/// Parameter totals split by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParameterCount {
    pub embedding: usize,
    pub decoders: usize,
    pub shishu_groups: usize,
    pub final_norm: usize,
    pub lm_head: usize,
}

impl ParameterCount {
    pub fn total(&self) -> usize {
        self.embedding + self.decoders + self.shishu_groups + self.final_norm + self.lm_head
    }
}

/// Unique parameters of one decoder block.
pub fn decoder_block_parameters(cfg: &ModelConfig) -> usize {
    let d = cfg.hidden_size;
    let attn = 2 * d * d + 2 * d * cfg.kv_dim();
    attn + mlp_parameters(cfg) + 2 * d
}

/// Unique parameters of one share group of MLP-only blocks (one norm).
pub fn shishu_group_parameters(cfg: &ModelConfig) -> usize {
    mlp_parameters(cfg) + cfg.hidden_size
}

fn mlp_parameters(cfg: &ModelConfig) -> usize {
    3 * cfg.hidden_size * cfg.intermediate_size
}

/// Closed-form breakdown of the unique parameters a config instantiates.
pub fn parameter_breakdown(cfg: &ModelConfig) -> ParameterCount {
    let d = cfg.hidden_size;
    ParameterCount {
        embedding: cfg.vocab_size * d,
        decoders: cfg.schedule.num_decoders() * decoder_block_parameters(cfg),
        shishu_groups: cfg.schedule.num_groups() * shishu_group_parameters(cfg),
        final_norm: d,
        lm_head: if cfg.tie_embeddings {
            0
        } else {
            d * cfg.vocab_size
        },
    }
}

/// Unique parameter count: each share group once, tied head not repeated.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    parameter_breakdown(cfg).total()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigRepr {
    hidden_size: usize,
    intermediate_size: usize,
    num_attention_heads: usize,
    num_kv_heads: usize,
    vocab_size: usize,
    #[serde(default = "default_max_seq_len")]
    max_seq_len: usize,
    #[serde(default = "default_eps")]
    rms_norm_eps: f64,
    #[serde(default = "default_theta")]
    rope_theta: f64,
    #[serde(default = "default_true")]
    tie_embeddings: bool,
    layers: LayersRepr,
}

fn default_max_seq_len() -> usize {
    2048
}
fn default_eps() -> f64 {
    DEFAULT_RMS_NORM_EPS
}
fn default_theta() -> f64 {
    DEFAULT_ROPE_THETA
}
fn default_true() -> bool {
    true
}

/// `layers` is either an explicit token list (`"D D S0 S0"`) or a plan table.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayersRepr {
    Explicit(String),
    Plan(SchedulePlan),
}

/// Bottom/top placement of decoder layers around shared MLP-only layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePlan {
    pub num_layers: usize,
    pub bottom_decoders: usize,
    #[serde(default)]
    pub top_decoders: usize,
    #[serde(default = "default_pair")]
    pub pair_size: usize,
}

fn default_pair() -> usize {
    2
}

impl SchedulePlan {
    pub fn build(&self) -> Result<LayerSchedule> {
        let decoders = self.bottom_decoders + self.top_decoders;
        if decoders > self.num_layers {
            return Err(Error::Config(format!(
                "{decoders} decoder layers do not fit in {} layers",
                self.num_layers
            )));
        }
        LayerSchedule::placement(
            self.bottom_decoders,
            self.num_layers - decoders,
            self.top_decoders,
            self.pair_size,
        )
    }
}

impl TryFrom<ConfigRepr> for ModelConfig {
    type Error = Error;

    fn try_from(r: ConfigRepr) -> Result<Self> {
        let schedule = match r.layers {
            LayersRepr::Explicit(s) => s.parse()?,
            LayersRepr::Plan(p) => p.build()?,
        };
        let cfg = ModelConfig {
            hidden_size: r.hidden_size,
            intermediate_size: r.intermediate_size,
            num_attention_heads: r.num_attention_heads,
            num_kv_heads: r.num_kv_heads,
            vocab_size: r.vocab_size,
            max_seq_len: r.max_seq_len,
            rms_norm_eps: r.rms_norm_eps,
            rope_theta: r.rope_theta,
            tie_embeddings: r.tie_embeddings,
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ModelConfig> for ConfigRepr {
    fn from(c: ModelConfig) -> Self {
        ConfigRepr {
            hidden_size: c.hidden_size,
            intermediate_size: c.intermediate_size,
            num_attention_heads: c.num_attention_heads,
            num_kv_heads: c.num_kv_heads,
            vocab_size: c.vocab_size,
            max_seq_len: c.max_seq_len,
            rms_norm_eps: c.rms_norm_eps,
            rope_theta: c.rope_theta,
            tie_embeddings: c.tie_embeddings,
            layers: LayersRepr::Explicit(c.schedule.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parent_counts() {
        assert_eq!(
            count_parameters(&ModelConfig::mobilellm_125m()),
            124_635_456
        );
        assert_eq!(
            count_parameters(&ModelConfig::mobilellm_600m()),
            603_188_352
        );
    }

    #[test]
    fn untied_head_adds_a_matrix() {
        let mut c = ModelConfig::mobilellm_125m();
        c.tie_embeddings = false;
        assert_eq!(count_parameters(&c), 124_635_456 + 576 * 32_000);
    }

    #[test]
    fn toml_round_trip_and_plan_form() {
        let c = ModelConfig::shishulm_125();
        let back = ModelConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);

        let text = r#"
            hidden_size = 64
            intermediate_size = 192
            num_attention_heads = 4
            num_kv_heads = 2
            vocab_size = 256
            max_seq_len = 128
            [layers]
            num_layers = 12
            bottom_decoders = 4
        "#;
        let c = ModelConfig::from_toml(text).unwrap();
        assert_eq!(c.schedule, LayerSchedule::shishu(12, 4, 2).unwrap());
        assert_eq!(c.rope_theta, 10_000.0);
        assert!(c.tie_embeddings);
    }

    #[test]
    fn unknown_keys_and_bad_shapes_fail() {
        let base = ModelConfig::tiny(LayerSchedule::all_decoder(2).unwrap()).to_toml();
        assert!(ModelConfig::from_toml(&format!("{base}\nbogus = 1\n")).is_err());
        let bad = base.replace("num_kv_heads = 2", "num_kv_heads = 3");
        assert!(ModelConfig::from_toml(&bad).is_err());
    }
}
