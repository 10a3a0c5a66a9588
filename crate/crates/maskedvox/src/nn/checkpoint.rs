//! Versioned binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `MVOXCKPT` · u32 version · model config (seven u32 fields) ·
//! u32 tensor count · per tensor: u16 name length, name bytes, u32 rows,
//! u32 cols, rows×cols f64 values. Values round-trip bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::model::{ModelConfig, ModelParams};
use crate::nn::tensor::Tensor;
use crate::targets::WindowConfig;

const MAGIC: &[u8; 8] = b"MVOXCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
}

/// Serialize parameters (config included) to bytes.
pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let c = &params.config;
    for field in [
        c.d_model,
        c.enc_hidden,
        c.blocks,
        c.head_hidden,
        c.n_recon,
        c.window.nx,
        c.window.ny,
    ] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    out.extend_from_slice(&(c.window.nz as u32).to_le_bytes());
    out.extend_from_slice(&(params.num_tensors() as u32).to_le_bytes());
    for (i, t) in params.tensors.iter().enumerate() {
        let name = params.name(i).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Exact number of scalars the registry for `config` would hold, without
/// allocating it. Checked arithmetic, so absurd header values come back
/// as `None` instead of overflowing. A unit test pins this formula to
/// [`ModelParams::init`], so it cannot silently drift.
fn implied_scalars(c: &ModelConfig) -> Option<usize> {
    let lin = |fan_in: usize, fan_out: usize| fan_in.checked_mul(fan_out)?.checked_add(fan_out);
    let d = c.d_model;
    let d2 = d.checked_mul(2)?;
    let mut total = lin(9, c.enc_hidden)?.checked_add(lin(c.enc_hidden, d)?)?;
    let block = lin(d, d)?
        .checked_mul(4)? // q, k, v, o projections
        .checked_add(d.checked_mul(4)?)? // two layer norms, gain + bias
        .checked_add(lin(d, d2)?)?
        .checked_add(lin(d2, d)?)?;
    total = total.checked_add(block.checked_mul(c.blocks)?)?;
    let classes = c
        .window
        .nx
        .checked_mul(c.window.ny)?
        .checked_mul(c.window.nz)?;
    total = total.checked_add(lin(d, c.head_hidden)?)?;
    total = total.checked_add(lin(c.head_hidden, classes)?)?;
    total = total.checked_add(lin(d, c.head_hidden)?)?;
    total = total.checked_add(lin(c.head_hidden, 3usize.checked_mul(c.n_recon)?)?)?;
    total.checked_add(3 + 9) // mask tokens
}

/// Parse checkpoint bytes back into parameters.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let d_model = r.u32()? as usize;
    let enc_hidden = r.u32()? as usize;
    let blocks = r.u32()? as usize;
    let head_hidden = r.u32()? as usize;
    let n_recon = r.u32()? as usize;
    let wnx = r.u32()? as usize;
    let wny = r.u32()? as usize;
    let wnz = r.u32()? as usize;
    for (name, v, min) in [
        ("d_model", d_model, 1),
        ("enc_hidden", enc_hidden, 1),
        ("blocks", blocks, 0),
        ("head_hidden", head_hidden, 1),
        ("n_recon", n_recon, 1),
        ("window nx", wnx, 1),
        ("window ny", wny, 1),
        ("window nz", wnz, 1),
    ] {
        if v < min || v > 1 << 16 {
            return Err(CheckpointError::Corrupt(format!("{name} = {v} out of range")));
        }
    }
    let window = WindowConfig::new(wnx, wny, wnz)
        .map_err(|e| CheckpointError::Corrupt(format!("window config: {e}")))?;
    let config = ModelConfig {
        d_model,
        enc_hidden,
        blocks,
        head_hidden,
        n_recon,
        window,
    };
    // Every stored scalar costs 8 bytes, so a config whose registry
    // could not fit in the file is corrupt. Rejecting it here keeps the
    // reference-registry allocation below proportional to the input.
    match implied_scalars(&config) {
        Some(total) if total <= bytes.len() / 8 => {}
        _ => {
            return Err(CheckpointError::Corrupt(
                "declared model larger than file".into(),
            ))
        }
    }

    let count = r.u32()? as usize;
    // Guard against absurd counts before allocating.
    if count > 1 << 20 {
        return Err(CheckpointError::Corrupt(format!("{count} tensors")));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name not utf-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= 1 << 28)
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} size")))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        names.push(name);
        tensors.push(Tensor::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    // The stored registry must match what this config would build, so a
    // loaded model is always safe to run.
    let reference = ModelParams::init(config, 0);
    if count != reference.num_tensors() {
        return Err(CheckpointError::Corrupt(format!(
            "config expects {} tensors, file has {count}",
            reference.num_tensors()
        )));
    }
    for i in 0..count {
        if names[i] != reference.name(i) || tensors[i].shape() != reference.tensors[i].shape() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {i} is {}{:?}, config expects {}{:?}",
                names[i],
                tensors[i].shape(),
                reference.name(i),
                reference.tensors[i].shape()
            )));
        }
    }
    Ok(ModelParams::from_parts(config, names, tensors))
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_to_bytes(params)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = ModelParams::init(ModelConfig::tiny(), 42);
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, params.config);
        assert_eq!(loaded.num_tensors(), params.num_tensors());
        for i in 0..params.num_tensors() {
            assert_eq!(loaded.name(i), params.name(i));
            assert_eq!(loaded.tensors[i].shape(), params.tensors[i].shape());
            for (a, b) in loaded.tensors[i].data.iter().zip(&params.tensors[i].data) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // Byte-stable serialization.
        assert_eq!(checkpoint_to_bytes(&params), checkpoint_to_bytes(&loaded));
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let params = ModelParams::init(ModelConfig::tiny(), 1);
        let mut bytes = checkpoint_to_bytes(&params);
        bytes[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::BadMagic)
        ));

        let mut bytes = checkpoint_to_bytes(&params);
        bytes[8] = 99;
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::BadVersion(99))
        ));
    }

    #[test]
    fn truncated_and_padded_files_rejected() {
        let params = ModelParams::init(ModelConfig::tiny(), 1);
        let bytes = checkpoint_to_bytes(&params);
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(matches!(
            checkpoint_from_bytes(&padded),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn implied_scalar_count_matches_registry() {
        let asym = ModelConfig {
            d_model: 6,
            enc_hidden: 5,
            blocks: 3,
            head_hidden: 7,
            n_recon: 2,
            window: WindowConfig::new(3, 2, 2).unwrap(),
        };
        for config in [ModelConfig::tiny(), asym] {
            let actual: usize = ModelParams::init(config, 0)
                .tensors
                .iter()
                .map(|t| t.data.len())
                .sum();
            assert_eq!(implied_scalars(&config), Some(actual));
        }
    }

    #[test]
    fn oversized_declared_model_rejected_before_allocating() {
        // A few dozen bytes claiming a multi-gigabyte model must be
        // refused outright, not answered with a giant allocation.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend(VERSION.to_le_bytes());
        for field in [65536u32, 65536, 65536, 65536, 65536, 2, 2, 1] {
            bytes.extend(field.to_le_bytes());
        }
        bytes.extend(0u32.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::Corrupt(_))
        ));

        // Same shape of attack with fields past the per-field cap.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend(VERSION.to_le_bytes());
        for field in [u32::MAX, 1, 0, 1, 1, 2, 2, 1] {
            bytes.extend(field.to_le_bytes());
        }
        bytes.extend(0u32.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope.ckpt")),
            Err(CheckpointError::Io { .. })
        ));
    }

    #[test]
    fn registry_mismatch_with_config_rejected() {
        let params = ModelParams::init(ModelConfig::tiny(), 1);
        let bytes = checkpoint_to_bytes(&params);
        // Corrupt the d_model header field: tensors no longer match.
        let mut bad = bytes.clone();
        bad[12] = 16;
        assert!(matches!(
            checkpoint_from_bytes(&bad),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
