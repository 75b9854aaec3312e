//! Versioned binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic[8] | version u32 | header_len u64 | header JSON | payload | sha256[32]
//! ```
//!
//! The JSON header carries a `manifest` (name, rows, cols per tensor, in
//! payload order) and a free-form `meta` object. The payload is every
//! tensor's data as `f64` LE. The trailing SHA-256 covers all preceding
//! bytes and doubles as the file's digest.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize)]
struct EnvelopeOut<'a, M> {
    manifest: Vec<ManifestEntry>,
    meta: &'a M,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn<M> {
    manifest: Vec<ManifestEntry>,
    meta: M,
}

/// Serializes a container and returns its bytes.
pub(crate) fn encode<M: Serialize>(
    magic: &[u8; 8],
    version: u32,
    meta: &M,
    tensors: &[(&str, &Tensor2)],
) -> Result<Vec<u8>> {
    let manifest = tensors
        .iter()
        .map(|(name, t)| ManifestEntry {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
        })
        .collect();
    let header = serde_json::to_vec(&EnvelopeOut { manifest, meta })?;
    let payload_len: usize = tensors.iter().map(|(_, t)| t.data().len() * 8).sum();
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload_len + DIGEST_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub(crate) fn write<M: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    meta: &M,
    tensors: &[(&str, &Tensor2)],
) -> Result<String> {
    let bytes = encode(magic, version, meta, tensors)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
}

pub(crate) struct Decoded<M> {
    pub meta: M,
    pub tensors: Vec<(String, Tensor2)>,
    pub digest: String,
}

pub(crate) fn decode<M: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<Decoded<M>> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(Error::Corrupt(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..8] != magic {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::UnsupportedVersion {
            found,
            expected: version,
        });
    }
    let body_end = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Corrupt(
            "checksum mismatch (truncated or modified file)".into(),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body_end)
        .ok_or_else(|| Error::Corrupt("header length exceeds file".into()))?;
    let env: EnvelopeIn<M> = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])?;

    let mut pos = header_end;
    let mut tensors = Vec::with_capacity(env.manifest.len());
    for entry in env.manifest {
        let count = entry
            .rows
            .checked_mul(entry.cols)
            .ok_or_else(|| Error::Corrupt(format!("{}: shape overflow", entry.name)))?;
        let end = pos
            .checked_add(count * 8)
            .filter(|&e| e <= body_end)
            .ok_or_else(|| {
                Error::Corrupt(format!("{}: payload shorter than manifest", entry.name))
            })?;
        let data = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor2::new(entry.rows, entry.cols, data)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", entry.name)))?;
        tensors.push((entry.name, t));
        pos = end;
    }
    if pos != body_end {
        return Err(Error::Corrupt("payload longer than manifest".into()));
    }
    Ok(Decoded {
        meta: env.meta,
        tensors,
        digest: hex::encode(&bytes[body_end..]),
    })
}

pub(crate) fn read<M: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
) -> Result<Decoded<M>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic, version)
}
