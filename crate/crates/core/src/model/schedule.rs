use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// What occupies one layer slot of the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Full block: norm → self-attention → residual → norm → MLP → residual.
    Decoder,
    /// Attention-free block: norm → MLP → residual. Layers with the same
    /// `group` read and write one set of weights.
    ShishuMlp { group: usize },
}

impl LayerKind {
    pub fn is_decoder(self) -> bool {
        matches!(self, LayerKind::Decoder)
    }
}

/// Per-layer plan of a model.
///
/// Share groups are numbered `0, 1, …` in order of first appearance and every
/// group occupies a run of adjacent layers.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerSchedule {
    kinds: Vec<LayerKind>,
}

impl LayerSchedule {
    pub fn new(kinds: Vec<LayerKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("schedule has no layers".into()));
        }
        let mut next_group = 0usize;
        let mut prev: Option<LayerKind> = None;
        for (i, &k) in kinds.iter().enumerate() {
            if let LayerKind::ShishuMlp { group } = k {
                let continues = prev == Some(k);
                if !continues {
                    if group != next_group {
                        return Err(Error::Config(format!(
                            "layer {i}: share group {group} is not adjacent to its other members or is numbered out of order (expected {next_group})"
                        )));
                    }
                    next_group += 1;
                }
            }
            prev = Some(k);
        }
        Ok(Self { kinds })
    }

    pub fn all_decoder(n_layers: usize) -> Result<Self> {
        Self::new(vec![LayerKind::Decoder; n_layers])
    }

    /// `n_decoder` decoder layers followed by `l_total − n_decoder`
    /// MLP-only layers shared in adjacent groups of `pair_size`.
    pub fn shishu(l_total: usize, n_decoder: usize, pair_size: usize) -> Result<Self> {
        if n_decoder > l_total {
            return Err(Error::Config(format!(
                "{n_decoder} decoder layers requested in a {l_total}-layer stack"
            )));
        }
        Self::placement(n_decoder, l_total - n_decoder, 0, pair_size)
    }

    /// `bottom` decoder layers, then `n_shishu` shared MLP-only layers, then
    /// `top` decoder layers.
    pub fn placement(bottom: usize, n_shishu: usize, top: usize, pair_size: usize) -> Result<Self> {
        if pair_size == 0 {
            return Err(Error::Config("pair size must be at least 1".into()));
        }
        if !n_shishu.is_multiple_of(pair_size) {
            return Err(Error::Config(format!(
                "{n_shishu} MLP-only layers cannot be grouped in sets of {pair_size}"
            )));
        }
        let mut kinds = vec![LayerKind::Decoder; bottom];
        kinds.extend((0..n_shishu).map(|i| LayerKind::ShishuMlp {
            group: i / pair_size,
        }));
        kinds.extend(std::iter::repeat_n(LayerKind::Decoder, top));
        Self::new(kinds)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[LayerKind] {
        &self.kinds
    }

    pub fn kind(&self, layer: usize) -> LayerKind {
        self.kinds[layer]
    }

    pub fn num_decoders(&self) -> usize {
        self.kinds.iter().filter(|k| k.is_decoder()).count()
    }

    pub fn num_shishu_layers(&self) -> usize {
        self.len() - self.num_decoders()
    }

    pub fn num_groups(&self) -> usize {
        self.kinds
            .iter()
            .filter_map(|k| match k {
                LayerKind::ShishuMlp { group } => Some(group + 1),
                LayerKind::Decoder => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Number of layers in each share group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_groups()];
        for k in &self.kinds {
            if let LayerKind::ShishuMlp { group } = k {
                sizes[*group] += 1;
            }
        }
        sizes
    }

    /// Index among decoder layers for each layer slot.
    pub fn decoder_slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.kinds
            .iter()
            .map(|k| {
                k.is_decoder().then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    /// The same layer plan with every MLP-only layer given its own weights.
    pub fn unshared(&self) -> Self {
        let mut g = 0;
        let kinds = self
            .kinds
            .iter()
            .map(|k| match k {
                LayerKind::Decoder => LayerKind::Decoder,
                LayerKind::ShishuMlp { .. } => {
                    g += 1;
                    LayerKind::ShishuMlp { group: g - 1 }
                }
            })
            .collect();
        Self { kinds }
    }
}

/// `n_decoder` decoder layers followed by MLP-only layers shared in adjacent
/// groups of `pair_size`.
pub fn make_shishu_schedule(
    l_total: usize,
    n_decoder: usize,
    pair_size: usize,
) -> Result<LayerSchedule> {
    LayerSchedule::shishu(l_total, n_decoder, pair_size)
}

/// Space-separated `D` / `S<group>` tokens, e.g. `D D S0 S0`.
impl fmt::Display for LayerSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.kinds.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match k {
                LayerKind::Decoder => f.write_str("D")?,
                LayerKind::ShishuMlp { group } => write!(f, "S{group}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for LayerSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split_whitespace()
            .map(|tok| match tok {
                "D" => Ok(LayerKind::Decoder),
                _ => tok
                    .strip_prefix('S')
                    .and_then(|g| g.parse().ok())
                    .map(|group| LayerKind::ShishuMlp { group })
                    .ok_or_else(|| Error::Config(format!("bad layer token {tok:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kinds)
    }
}
