//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "SHISHUCK"
//! version   u32
//! config    u64 length + UTF-8 TOML text
//! count     u32 number of parameter records
//! record    u32 name length, name, u8 dtype tag, u32 ndim, u64 dims…, payload
//! digest    32 bytes SHA-256 of everything above
//! ```
//!
//! Parameters appear in [`ModelWeights::params`] order; a share group is one
//! record under its group name.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{DType, Float};

use super::config::ModelConfig;
use super::weights::ModelWeights;

pub const MAGIC: &[u8; 8] = b"SHISHUCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serialized checkpoint bytes.
pub fn encode_checkpoint<F: Float>(weights: &ModelWeights<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = weights.config.to_toml();
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let params = weights.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(F::DTYPE.tag());
        out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes `weights` to `path`, replacing any existing file atomically.
pub fn save_checkpoint<F: Float>(weights: &ModelWeights<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(weights);
    let tmp = tmp_path(path);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(self.path, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, width64: bool) -> Result<usize> {
        let v = if width64 {
            self.u64()?
        } else {
            self.u32()? as u64
        };
        usize::try_from(v).map_err(|_| corrupt(self.path, "length does not fit in memory"))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| corrupt(self.path, "invalid UTF-8"))
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn decode_checkpoint<F: Float>(
    bytes: &[u8],
    path: &Path,
) -> Result<(ModelConfig, ModelWeights<F>)> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!("format version {version} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt(path, "checksum mismatch"));
    }
    let mut r = Reader {
        bytes: body,
        pos: 12,
        path,
    };
    let config_len = r.len(true)?;
    let config = ModelConfig::from_toml(r.text(config_len)?)
        .map_err(|e| corrupt(path, format!("embedded config: {e}")))?;
    let mut weights = ModelWeights::<F>::zeroed(&config)
        .map_err(|e| corrupt(path, format!("embedded config: {e}")))?;
    let names: Vec<String> = weights.params().into_iter().map(|(n, _)| n).collect();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(corrupt(
            path,
            format!("{count} parameter records, config implies {}", names.len()),
        ));
    }
    for (expected, tensor) in names.iter().zip(weights.params_mut()) {
        let name_len = r.len(false)?;
        let name = r.text(name_len)?;
        if name != expected {
            return Err(corrupt(
                path,
                format!("record {name:?} where {expected:?} was expected"),
            ));
        }
        let dtype = DType::from_tag(r.u8()?)
            .ok_or_else(|| corrupt(path, format!("{name}: unknown dtype tag")))?;
        let ndim = r.len(false)?;
        let shape = (0..ndim).map(|_| r.len(true)).collect::<Result<Vec<_>>>()?;
        if shape != tensor.shape() {
            return Err(corrupt(
                path,
                format!(
                    "{name}: shape {shape:?} does not match config shape {:?}",
                    tensor.shape()
                ),
            ));
        }
        let size = dtype.size_of();
        let payload = r.take(tensor.numel() * size)?;
        let dst = tensor.data_mut();
        for (v, chunk) in dst.iter_mut().zip(payload.chunks_exact(size)) {
            *v = match dtype {
                DType::F32 => F::from_f64_lossy(f32::read_le(chunk) as f64),
                DType::F64 => F::from_f64_lossy(f64::read_le(chunk)),
            };
        }
    }
    if r.pos != body.len() {
        return Err(corrupt(path, "trailing bytes after the last record"));
    }
    Ok((config, weights))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<F: Float>(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelWeights<F>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| corrupt(path, e.to_string()))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::schedule::LayerSchedule;

    fn small() -> ModelWeights<f32> {
        let cfg = ModelConfig::tiny(LayerSchedule::shishu(6, 2, 2).unwrap());
        ModelWeights::build(&cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&w, &path).unwrap();
        let (cfg, back) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(cfg, w.config);
        assert_eq!(back, w);
        assert_eq!(back.shishu_groups.len(), 2);
        assert!(!dir.path().join("m.ckpt.partial").exists());
    }

    #[test]
    fn shared_group_is_stored_once() {
        let w = small();
        let bytes = encode_checkpoint(&w);
        let needle = b"shishu_groups.0.mlp.gate_proj";
        let hits = bytes
            .windows(needle.len())
            .filter(|win| win == needle)
            .count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let w = small();
        let mut bytes = encode_checkpoint(&w);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = decode_checkpoint::<f32>(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn version_and_magic_are_checked() {
        let w = small();
        let mut bytes = encode_checkpoint(&w);
        bytes[8] = 9;
        let err = decode_checkpoint::<f32>(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        assert!(decode_checkpoint::<f32>(
            b"garbage that is long enough to pass the length check...",
            Path::new("x")
        )
        .is_err());
    }

    #[test]
    fn f32_checkpoint_loads_as_f64() {
        let w = small();
        let bytes = encode_checkpoint(&w);
        let (_, wide) = decode_checkpoint::<f64>(&bytes, Path::new("x")).unwrap();
        assert_eq!(wide.cast::<f32>(), w);
    }
}
