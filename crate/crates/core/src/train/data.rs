use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::RngState;

/// Byte-level tokenization: one token per byte, vocabulary 256.
pub const BYTE_VOCAB: usize = 256;

pub fn byte_tokens(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| u32::from(b)).collect()
}

/// Lossy text rendering of byte tokens; ids above 255 become `?`.
pub fn detokenize(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .map(|&t| u8::try_from(t).unwrap_or(b'?'))
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Inputs and shifted targets of `rows` examples, each `seq` long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub rows: usize,
}

impl Batch {
    /// Builds a batch from examples of `seq + 1` tokens.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut rows = 0;
        for ex in examples {
            inputs.extend_from_slice(&ex[..ex.len() - 1]);
            targets.extend_from_slice(&ex[1..]);
            rows += 1;
        }
        Self {
            inputs,
            targets,
            rows,
        }
    }

    pub fn seq(&self) -> usize {
        self.inputs.len() / self.rows.max(1)
    }

    /// Rows `start..start + count` as a new batch.
    pub fn slice_rows(&self, start: usize, count: usize) -> Self {
        let seq = self.seq();
        let range = start * seq..(start + count) * seq;
        Self {
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range].to_vec(),
            rows: count,
        }
    }
}

/// A token stream cut into non-overlapping blocks.
///
/// Block `i` starts at `i · block_size` and its example spans
/// `block_size + 1` tokens so inputs and targets can be shifted by one. The
/// last `val_blocks` blocks are held out for validation.
#[derive(Clone, Debug)]
pub struct CorpusDataset {
    tokens: Vec<u32>,
    block_size: usize,
    num_train: usize,
    num_val: usize,
}

impl CorpusDataset {
    pub fn from_tokens(tokens: Vec<u32>, block_size: usize, val_blocks: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        let blocks = tokens.len().saturating_sub(1) / block_size;
        if blocks <= val_blocks {
            return Err(Error::Empty(format!(
                "corpus of {} tokens gives {blocks} blocks of {block_size}; need more than the {val_blocks} held out",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            block_size,
            num_train: blocks - val_blocks,
            num_val: val_blocks,
        })
    }

    pub fn from_bytes(bytes: &[u8], block_size: usize, val_blocks: usize) -> Result<Self> {
        Self::from_tokens(byte_tokens(bytes), block_size, val_blocks)
    }

    pub fn from_file(path: impl AsRef<Path>, block_size: usize, val_blocks: usize) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, block_size, val_blocks)
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_train_blocks(&self) -> usize {
        self.num_train
    }

    pub fn num_val_blocks(&self) -> usize {
        self.num_val
    }

    fn block(&self, index: usize) -> &[u32] {
        let start = index * self.block_size;
        &self.tokens[start..start + self.block_size + 1]
    }

    /// Training example `i` (`block_size + 1` tokens).
    pub fn train_example(&self, i: usize) -> &[u32] {
        assert!(i < self.num_train, "train block {i} out of range");
        self.block(i)
    }

    pub fn val_examples(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (self.num_train..self.num_train + self.num_val).map(|i| self.block(i))
    }

    /// Endless stream of training blocks, reshuffled every epoch.
    pub fn sampler(&self, seed: u64) -> BlockSampler {
        BlockSampler::new(self.num_train, seed)
    }
}

/// Deterministic epoch-wise shuffled order over `0..n`.
#[derive(Clone, Debug)]
pub struct BlockSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    rng: RngState,
}

impl BlockSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            rng: RngState::new(seed),
        };
        s.order.shuffle(s.rng.rng());
        s
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(self.rng.rng());
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn next_batch(&mut self, data: &CorpusDataset, rows: usize) -> Batch {
        let picks: Vec<usize> = (0..rows).map(|_| self.next_index()).collect();
        Batch::from_examples(picks.into_iter().map(|i| data.train_example(i)))
    }
}

const WORDS: &[&str] = &[
    "the",
    "of",
    "and",
    "to",
    "in",
    "is",
    "was",
    "for",
    "on",
    "with",
    "as",
    "by",
    "at",
    "from",
    "that",
    "which",
    "river",
    "city",
    "north",
    "south",
    "early",
    "later",
    "music",
    "album",
    "season",
    "game",
    "team",
    "school",
    "church",
    "island",
    "station",
    "road",
    "village",
    "battle",
    "army",
    "king",
    "queen",
    "film",
    "song",
    "band",
    "record",
    "league",
    "player",
    "county",
    "state",
    "year",
    "century",
    "history",
    "species",
    "family",
    "built",
    "released",
    "became",
    "played",
    "described",
    "located",
    "known",
    "called",
    "first",
    "second",
    "new",
    "old",
    "large",
    "small",
    "main",
    "local",
    "national",
    "during",
    "after",
    "before",
    "between",
    "under",
    "over",
];

/// Deterministic English-like text of exactly `len` bytes: sentences of
/// words drawn from a small vocabulary with a skewed frequency profile.
pub fn synthetic_corpus(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(len + 64);
    while out.len() < len {
        let words = 4 + rng.below(9);
        for w in 0..words {
            // squaring a uniform index favors the front of the list
            let u = rng.uniform();
            let word = WORDS[((u * u) * WORDS.len() as f64) as usize];
            if w == 0 {
                let mut chars = word.chars();
                let first = chars.next().expect("non-empty word").to_ascii_uppercase();
                out.push(first as u8);
                out.extend(chars.map(|c| c as u8));
            } else {
                out.push(b' ');
                out.extend_from_slice(word.as_bytes());
            }
        }
        out.extend_from_slice(if rng.below(5) == 0 { b".\n" } else { b". " });
    }
    out.truncate(len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_are_block_plus_one() {
        let d = CorpusDataset::from_tokens((0..101).collect(), 10, 2).unwrap();
        assert_eq!(d.num_train_blocks(), 8);
        assert_eq!(d.num_val_blocks(), 2);
        assert_eq!(d.train_example(0), &(0..11).collect::<Vec<u32>>()[..]);
        assert!(d.val_examples().all(|e| e.len() == 11));
        assert_eq!(d.val_examples().next().unwrap()[0], 80);
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        assert!(CorpusDataset::from_tokens((0..20).collect(), 10, 1).is_err());
        assert!(CorpusDataset::from_tokens(vec![], 4, 0).is_err());
    }

    #[test]
    fn sampler_covers_each_block_once_per_epoch() {
        let mut s = BlockSampler::new(7, 1);
        let mut first: Vec<usize> = (0..7).map(|_| s.next_index()).collect();
        assert_eq!(s.epoch(), 0);
        let second: Vec<usize> = (0..7).map(|_| s.next_index()).collect();
        assert_eq!(s.epoch(), 1);
        first.sort();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        let mut again = BlockSampler::new(7, 1);
        let replay: Vec<usize> = (0..14).map(|_| again.next_index()).collect();
        assert_eq!(&replay[7..], &second[..]);
    }

    #[test]
    fn batch_shifts_targets() {
        let b = Batch::from_examples([&[1u32, 2, 3][..], &[4, 5, 6][..]]);
        assert_eq!(b.inputs, vec![1, 2, 4, 5]);
        assert_eq!(b.targets, vec![2, 3, 5, 6]);
        assert_eq!(b.slice_rows(1, 1).inputs, vec![4, 5]);
    }

    #[test]
    fn synthetic_text_is_deterministic_ascii() {
        let a = synthetic_corpus(5000, 9);
        assert_eq!(a.len(), 5000);
        assert_eq!(a, synthetic_corpus(5000, 9));
        assert!(a.iter().all(|b| b.is_ascii()));
    }
}
