//! Versioned, checksummed state files written by atomic replace.
//!
//! ```text
//! magic [4] | version u8 | payload (u32 len ‖ bytes) | SHA-256 of everything before [32]
//! ```

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use crate::codec::{Decoder, Encoder};
use crate::crypto::hash::sha256;

use super::ProtocolError;

pub const STATE_VERSION: u8 = 1;

pub fn seal(magic: &[u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.raw(magic).u8(STATE_VERSION).field(payload);
    let sum = sha256(enc.as_bytes());
    enc.raw(&sum);
    enc.finish()
}

pub fn unseal<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<&'a [u8], ProtocolError> {
    if bytes.len() < 32 {
        return Err(ProtocolError::CorruptState("file too short"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != sum {
        return Err(ProtocolError::CorruptState("checksum mismatch"));
    }
    let mut dec = Decoder::new(body);
    let corrupt = |_| ProtocolError::CorruptState("header");
    if &dec.raw::<4>("magic").map_err(corrupt)? != magic {
        return Err(ProtocolError::CorruptState("wrong file type"));
    }
    if dec.u8("version").map_err(corrupt)? != STATE_VERSION {
        return Err(ProtocolError::CorruptState("unsupported version"));
    }
    let payload = dec.field("payload").map_err(corrupt)?;
    dec.finish().map_err(corrupt)?;
    Ok(payload)
}

/// Writes to a sibling temp file, syncs it, then renames over `path`, so a
/// crash leaves either the old or the new state.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ProtocolError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn save(path: &Path, magic: &[u8; 4], payload: &[u8]) -> Result<(), ProtocolError> {
    write_atomic(path, &seal(magic, payload))
}

pub fn load(path: &Path, magic: &[u8; 4]) -> Result<Vec<u8>, ProtocolError> {
    let bytes = fs::read(path)?;
    unseal(magic, &bytes).map(<[u8]>::to_vec)
}
