//! Flat binary parameter checkpoints.
//!
//! Layout: three little-endian `u64`s (spec hash, input dimension, parameter
//! count) followed by the parameters as little-endian `f64`. A text sidecar
//! next to the file records the spec in readable form.

use std::fs;
use std::path::{Path, PathBuf};

use super::mlp::{NetParams, NetSpec};
use crate::error::{Error, Result};
use crate::real::Real;

pub fn encode<F: Real>(spec: &NetSpec, params: &NetParams<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * params.len());
    out.extend(spec.hash().to_le_bytes());
    out.extend((spec.input_dim as u64).to_le_bytes());
    out.extend((params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend(v.to_f64_lossy().to_le_bytes());
    }
    out
}

pub fn decode<F: Real>(spec: &NetSpec, bytes: &[u8]) -> Result<NetParams<F>> {
    let word = |i: usize| -> Result<u64> {
        bytes
            .get(8 * i..8 * i + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| Error::Parse("checkpoint truncated".into()))
    };
    let (hash, dim, count) = (word(0)?, word(1)?, word(2)? as usize);
    if hash != spec.hash() || dim != spec.input_dim as u64 {
        return Err(Error::Parse(format!(
            "checkpoint was written for a different network (hash {hash:016x}, dim {dim})"
        )));
    }
    if bytes.len() != 24 + 8 * count {
        return Err(Error::Parse(format!(
            "checkpoint holds {} bytes of parameters, header says {count} values",
            bytes.len().saturating_sub(24)
        )));
    }
    let values = bytes[24..]
        .chunks_exact(8)
        .map(|b| F::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
        .collect();
    NetParams::from_values(spec, values)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".spec");
    PathBuf::from(name)
}

pub fn sidecar_text<F: Real>(spec: &NetSpec, params: &NetParams<F>) -> String {
    let mut s = String::new();
    for field in spec.describe().split(' ') {
        s.push_str(&field.replacen('=', " = ", 1));
        s.push('\n');
    }
    s.push_str(&format!("spec_hash = {:016x}\nparam_count = {}\n", spec.hash(), params.len()));
    s
}

/// Writes the checkpoint and its sidecar.
pub fn save<F: Real>(path: &Path, spec: &NetSpec, params: &NetParams<F>) -> Result<()> {
    fs::write(path, encode(spec, params))?;
    fs::write(sidecar_path(path), sidecar_text(spec, params))?;
    Ok(())
}

pub fn load<F: Real>(path: &Path, spec: &NetSpec) -> Result<NetParams<F>> {
    decode(spec, &fs::read(path)?)
}
