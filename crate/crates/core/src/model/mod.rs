//! Model definition: layer schedules, configuration and parameter counting,
//! weights, forward/backward passes, KV cache, generation and checkpoints.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod generate;
pub mod schedule;
pub mod weights;

pub use cache::KvCache;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{
    count_parameters, parameter_breakdown, ModelConfig, ParameterCount, SchedulePlan,
};
pub use forward::{
    attention_forward, decoder_block_forward, shishu_mlp_block_forward, AttentionObserver,
    ForwardTrace,
};
pub use generate::{generate, Sampling};
pub use schedule::{make_shishu_schedule, LayerKind, LayerSchedule};
pub use weights::{
    build_model, AttentionWeights, DecoderWeights, LayerView, MlpWeights, ModelWeights,
    ShishuWeights, INIT_STD,
};
