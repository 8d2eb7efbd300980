//! Binary artifact container shared by datasets, models and bundles.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes  "CGFA"
//! version   u32      1
//! kind      u32      length-prefixed ASCII tag follows (e.g. "dataset")
//! header    u64 len + UTF-8 JSON
//! payload   u64 count + count * f64 (IEEE-754, little-endian)
//! ```
//!
//! Floats in the payload are stored as raw bits, so `read(write(x)) == x`
//! bit-for-bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CGFA";
const VERSION: u32 = 1;

pub fn encode<H: Serialize>(kind: &str, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(32 + kind.len() + json.len() + payload.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Artifact("not a cgf archive (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Artifact(format!("unsupported archive version {version}")));
    }
    let kind_len = read_u32(&mut r)? as usize;
    let found = take(&mut r, kind_len)?;
    if found != kind.as_bytes() {
        return Err(Error::Artifact(format!(
            "expected a {kind} archive, found {}",
            String::from_utf8_lossy(found)
        )));
    }
    let header_len = read_u64(&mut r)? as usize;
    let header: H = serde_json::from_slice(take(&mut r, header_len)?)?;
    let count = read_u64(&mut r)? as usize;
    let raw = take(&mut r, count.checked_mul(8).ok_or_else(truncated_msg)?)?;
    if !r.is_empty() {
        return Err(Error::Artifact(format!("{} trailing bytes", r.len())));
    }
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, payload))
}

pub fn write<H: Serialize>(path: &Path, kind: &str, header: &H, payload: &[f64]) -> Result<()> {
    let bytes = encode(kind, header, payload)?;
    let mut f = std::fs::File::create(path).map_err(Error::at_path(path))?;
    f.write_all(&bytes).map_err(Error::at_path(path))?;
    Ok(())
}

pub fn read<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    decode(kind, &bytes).map_err(|e| match e {
        Error::Artifact(msg) => Error::Artifact(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_f64(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(truncated_msg());
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into().expect("8 bytes")))
}

fn truncated(_: std::io::Error) -> Error {
    truncated_msg()
}

fn truncated_msg() -> Error {
    Error::Artifact("truncated archive".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(payload in proptest::collection::vec(any::<f64>(), 0..64), tag in "[a-z]{1,8}") {
            let header = serde_json::json!({ "tag": tag, "n": payload.len() });
            let bytes = encode("test", &header, &payload).unwrap();
            let (h, p): (serde_json::Value, Vec<f64>) = decode("test", &bytes).unwrap();
            prop_assert_eq!(h, header);
            let a: Vec<u64> = payload.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_wrong_kind_and_truncation() {
        let bytes = encode("model", &serde_json::json!({}), &[1.0, 2.0]).unwrap();
        assert!(decode::<serde_json::Value>("dataset", &bytes).is_err());
        assert!(decode::<serde_json::Value>("model", &bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<serde_json::Value>("model", &extra).is_err());
    }
}
