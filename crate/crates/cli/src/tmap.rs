//! `TMAPv1` checkpoint files.
//!
//! ```text
//! 0..8        magic  "TMAPv1\0\0"
//! 8..16       u64 LE header length H
//! 16..16+H    UTF-8 JSON {"meta":{..},"tensors":{name:{"shape":[..],"offset":o,"len":n}}}
//! 16+H..      tensor data, little-endian f64, row-major
//! ```
//!
//! `offset` and `len` are byte counts relative to the start of the data
//! section. Tensors are laid out in name order with no gaps, and the header
//! is compact JSON with sorted keys, so equal checkpoints encode to equal
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use aim_core::{Checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use crate::FormatError;

pub const MAGIC: &[u8; 8] = b"TMAPv1\0\0";
const PREFIX: usize = 16;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: BTreeMap<String, String>,
    tensors: BTreeMap<String, Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

pub fn encode(c: &Checkpoint) -> Vec<u8> {
    let mut offset = 0u64;
    let mut tensors = BTreeMap::new();
    for (name, t) in &c.tensors {
        let len = (t.len() * 8) as u64;
        tensors.insert(
            name.clone(),
            Entry {
                shape: t.shape().to_vec(),
                offset,
                len,
            },
        );
        offset += len;
    }
    let header = serde_json::to_vec(&Header {
        meta: c.meta.clone(),
        tensors,
    })
    .expect("header serialization cannot fail");

    let mut out = Vec::with_capacity(PREFIX + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in c.tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let magic_len = bytes.len().min(MAGIC.len());
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < PREFIX {
        return Err(FormatError::Truncated {
            expected: PREFIX as u64,
            found: bytes.len() as u64,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let data_start = (PREFIX as u64).checked_add(header_len).ok_or(FormatError::Truncated {
        expected: u64::MAX,
        found: bytes.len() as u64,
    })?;
    if data_start > bytes.len() as u64 {
        return Err(FormatError::Truncated {
            expected: data_start,
            found: bytes.len() as u64,
        });
    }
    let data_start = data_start as usize;
    let header: Header =
        serde_json::from_slice(&bytes[PREFIX..data_start]).map_err(|e| FormatError::Header(e.to_string()))?;
    let data = &bytes[data_start..];

    let mut entries: Vec<(&String, &Entry)> = header.tensors.iter().collect();
    entries.sort_by_key(|(_, e)| e.offset);
    let mut expected_offset = 0u64;
    for (name, e) in &entries {
        if e.offset != expected_offset {
            return Err(FormatError::Header(format!(
                "tensor `{name}` starts at {} but the previous one ends at {expected_offset}",
                e.offset
            )));
        }
        let elements = e.shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if elements.and_then(|n| n.checked_mul(8)) != Some(e.len) {
            return Err(FormatError::LengthMismatch(format!(
                "tensor `{name}` with shape {:?} declares {} bytes",
                e.shape, e.len
            )));
        }
        expected_offset += e.len;
    }
    if (data.len() as u64) < expected_offset {
        return Err(FormatError::Truncated {
            expected: data_start as u64 + expected_offset,
            found: bytes.len() as u64,
        });
    }
    if data.len() as u64 != expected_offset {
        return Err(FormatError::LengthMismatch(format!(
            "header describes {expected_offset} data bytes, payload has {}",
            data.len()
        )));
    }

    let mut c = Checkpoint::new();
    c.meta = header.meta;
    for (name, e) in entries {
        let raw = &data[e.offset as usize..(e.offset + e.len) as usize];
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(name.clone()));
        }
        c.insert(name.clone(), Tensor::new(e.shape.clone(), values)?);
    }
    Ok(c)
}

pub fn save(c: &Checkpoint, path: &Path) -> Result<(), FormatError> {
    if let Some(name) = c.first_non_finite() {
        return Err(FormatError::NonFinite(name.to_string()));
    }
    crate::write_bytes(path, &encode(c))
}

pub fn load(path: &Path) -> Result<Checkpoint, FormatError> {
    decode(&crate::read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tensor() -> Checkpoint {
        Checkpoint::new().with_tensor("w", Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.0, 3.25]).unwrap())
    }

    #[test]
    fn empty_round_trip() {
        let c = Checkpoint::new();
        assert_eq!(decode(&encode(&c)).unwrap(), c);
    }

    #[test]
    fn byte_layout_matches_hand_encoding() {
        let header = br#"{"meta":{},"tensors":{"w":{"shape":[2,2],"offset":0,"len":32}}}"#;
        let mut want = b"TMAPv1\0\0".to_vec();
        want.extend_from_slice(&(header.len() as u64).to_le_bytes());
        want.extend_from_slice(header);
        for v in [1.0f64, -2.5, 0.0, 3.25] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(encode(&one_tensor()), want);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&one_tensor());
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic));
        assert_eq!(err.to_string(), "bad magic");
        assert!(matches!(decode(b"NOPE"), Err(FormatError::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&one_tensor());
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode(&bytes[..12]), Err(FormatError::Truncated { .. })));
        assert!(matches!(decode(&bytes[..20]), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_are_a_length_mismatch() {
        let mut bytes = encode(&one_tensor());
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode(&bytes), Err(FormatError::LengthMismatch(_))));
    }

    #[test]
    fn declared_len_must_match_shape() {
        let header = br#"{"meta":{},"tensors":{"w":{"shape":[2,2],"offset":0,"len":24}}}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0; 24]);
        assert!(matches!(decode(&bytes), Err(FormatError::LengthMismatch(_))));
    }

    #[test]
    fn gaps_are_rejected() {
        let header = br#"{"meta":{},"tensors":{"a":{"shape":[1],"offset":8,"len":8}}}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0; 16]);
        assert!(matches!(decode(&bytes), Err(FormatError::Header(_))));
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut bytes = encode(&one_tensor());
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(FormatError::NonFinite(name)) if name == "w"));
    }

    #[test]
    fn meta_survives() {
        let mut c = one_tensor();
        c.meta.insert("model_spec_id".into(), "abc".into());
        c.meta.insert("note".into(), "ünïcode".into());
        assert_eq!(decode(&encode(&c)).unwrap(), c);
    }
}
