//! Versioned binary container shared by checkpoints and feature banks.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, `f32` little-endian payload, SHA-256 of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PREFIX: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

pub(crate) fn write<H: Serialize>(path: &Path, magic: &[u8; 8], version: u32, header: &H, payload: &[f32]) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(PREFIX + header.len() + 4 * payload.len() + DIGEST);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    // Write then rename so readers never observe a partial file.
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read<H: DeserializeOwned>(path: &Path, magic: &[u8; 8], version: u32) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupted = |reason: &str| Error::Corrupted {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < PREFIX + DIGEST || &bytes[..8] != magic {
        return Err(corrupted("unrecognized file signature"));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Version { found, expected: version });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupted("checksum mismatch"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if header_len > body.len() - PREFIX || (body.len() - PREFIX - header_len) % 4 != 0 {
        return Err(corrupted("inconsistent section lengths"));
    }
    let header = serde_json::from_slice(&body[PREFIX..PREFIX + header_len])
        .map_err(|e| corrupted(&format!("unreadable header: {e}")))?;
    let payload = body[PREFIX + header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, payload))
}

/// Hex SHA-256 of a file's bytes.
/// Streams a file through SHA-256.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = std::io::Read::read(&mut f, &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
