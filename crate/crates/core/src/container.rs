//! Binary container shared by every on-disk artifact.
//!
//! Layout: ASCII magic, little-endian `u64` metadata length `M`, `M` bytes of
//! UTF-8 JSON metadata, then a raw little-endian payload whose length the
//! metadata determines.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FEATSET_MAGIC: &[u8] = b"FEATSETv1\n";
pub const PROBE_MAGIC: &[u8] = b"PROBEv1\n";
pub const PROJ_MAGIC: &[u8] = b"PROJv1\n";
pub const IDSTAT_MAGIC: &[u8] = b"IDSTATv1\n";

pub(crate) fn encode<M: Serialize>(magic: &[u8], meta: &M, payload: &[u8]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta).map_err(|e| Error::Metadata(e.to_string()))?;
    let mut out = Vec::with_capacity(magic.len() + 8 + meta.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits a container into parsed metadata and the raw payload bytes.
pub(crate) fn decode<'a, M: DeserializeOwned>(magic: &[u8], bytes: &'a [u8]) -> Result<(M, &'a [u8])> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let header = magic.len() + 8;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header as u64,
            found: bytes.len() as u64,
        });
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[magic.len()..header]);
    let meta_len = u64::from_le_bytes(len);
    let meta_end = (header as u64).saturating_add(meta_len);
    if (bytes.len() as u64) < meta_end {
        return Err(Error::Truncated {
            expected: meta_end,
            found: bytes.len() as u64,
        });
    }
    let meta_end = meta_end as usize;
    let meta = serde_json::from_slice(&bytes[header..meta_end]).map_err(|e| Error::Metadata(e.to_string()))?;
    Ok((meta, &bytes[meta_end..]))
}

/// Checks that a payload has exactly `expected` bytes.
pub(crate) fn check_payload_len(payload: &[u8], expected: u64) -> Result<()> {
    let actual = payload.len() as u64;
    if actual < expected {
        Err(Error::Truncated {
            expected,
            found: actual,
        })
    } else if actual > expected {
        Err(Error::LengthMismatch {
            declared: expected,
            actual,
        })
    } else {
        Ok(())
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn read_i32s(bytes: &[u8]) -> Vec<i32> {
    bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`, so a
/// crash never leaves a truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&tmp)
        .map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
