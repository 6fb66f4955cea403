//! The `TSTOR1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | `0..6`       | magic `TSTOR1`                                      |
//! | `6..8`       | reserved, zero                                      |
//! | `8..16`      | `u64` header length `H`                             |
//! | `16..16+H`   | UTF-8 JSON header                                   |
//! | rest         | raw row-major `f32` data                            |
//!
//! The header maps each tensor name to
//! `{"dtype":"f32","shape":[..],"offset_begin":u64,"offset_end":u64}`, with
//! byte offsets relative to the data section. Entries are sorted by name and
//! their ranges tile the data section exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"TSTOR1";
const PREAMBLE_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("truncated input at byte {offset}: need {needed} more byte(s)")]
    Truncated { offset: u64, needed: u64 },
    #[error("bad magic at byte 0")]
    BadMagic,
    #[error("reserved bytes at offset 6 are not zero")]
    ReservedNonZero,
    #[error("header at byte {offset} is not valid: {message}")]
    Header { offset: u64, message: String },
    #[error("tensor `{name}` (header byte {offset}): unknown dtype `{dtype}`")]
    UnknownDtype { name: String, dtype: String, offset: u64 },
    #[error("header byte {offset}: tensor names must be non-empty")]
    EmptyName { offset: u64 },
    #[error("tensor `{name}` (header byte {offset}): names not strictly sorted after `{previous}`")]
    Unsorted { name: String, previous: String, offset: u64 },
    #[error("tensor `{name}` at data byte {offset}: range overlaps the previous tensor (expected begin {expected})")]
    Overlap { name: String, offset: u64, expected: u64 },
    #[error("tensor `{name}` at data byte {offset}: gap before range (expected begin {expected})")]
    Gap { name: String, offset: u64, expected: u64 },
    #[error("tensor `{name}` at data byte {offset}: offset_end before offset_begin")]
    InvertedRange { name: String, offset: u64 },
    #[error("tensor `{name}` at data byte {offset}: shape {shape:?} needs {expected} bytes, range holds {actual}")]
    ShapeMismatch { name: String, shape: Vec<usize>, offset: u64, expected: u64, actual: u64 },
    #[error("tensor `{name}` at byte {offset}: non-finite value")]
    NonFinite { name: String, offset: u64 },
    #[error("{count} trailing byte(s) after data at byte {offset}")]
    TrailingBytes { offset: u64, count: u64 },
    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum StoreIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: String, source: StoreError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, String> {
        let t = Self { dtype: DType::F32, shape, data };
        t.check()?;
        Ok(t)
    }

    pub fn numel(&self) -> Option<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    fn check(&self) -> Result<(), String> {
        let n = self.numel().ok_or_else(|| format!("shape {:?} overflows", self.shape))?;
        if n != self.data.len() {
            return Err(format!("shape {:?} needs {n} values, got {}", self.shape, self.data.len()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// Named tensors in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    pub entries: BTreeMap<String, Tensor>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), StoreError> {
        let name = name.into();
        if name.is_empty() {
            return Err(StoreError::InvalidTensor { name, reason: "empty name".into() });
        }
        tensor.check().map_err(|reason| StoreError::InvalidTensor { name: name.clone(), reason })?;
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        for (name, tensor) in &self.entries {
            if name.is_empty() {
                return Err(StoreError::InvalidTensor { name: name.clone(), reason: "empty name".into() });
            }
            tensor
                .check()
                .map_err(|reason| StoreError::InvalidTensor { name: name.clone(), reason })?;
        }
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, StoreIoError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| StoreIoError::Io { path: display.clone(), source })?;
        parse_store(&bytes).map_err(|source| StoreIoError::Format { path: display, source })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), StoreIoError> {
        let path = path.as_ref();
        std::fs::write(path, write_store(self))
            .map_err(|source| StoreIoError::Io { path: path.display().to_string(), source })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    offset_begin: u64,
    offset_end: u64,
}

/// Header entries in document order; duplicate names are rejected.
struct HeaderEntries(Vec<(String, HeaderEntry)>);

impl<'de> Deserialize<'de> for HeaderEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = HeaderEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object of tensor entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries: Vec<(String, HeaderEntry)> = Vec::new();
                while let Some((name, entry)) = map.next_entry::<String, HeaderEntry>()? {
                    if entries.iter().any(|(n, _)| *n == name) {
                        return Err(de::Error::custom(format!("duplicate tensor name `{name}`")));
                    }
                    entries.push((name, entry));
                }
                Ok(HeaderEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[at..at + 8]);
    u64::from_le_bytes(buf)
}

pub fn parse_store(bytes: &[u8]) -> Result<TensorStore, StoreError> {
    let len = bytes.len() as u64;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(StoreError::Truncated { offset: len, needed: PREAMBLE_LEN as u64 - len });
        }
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(StoreError::Truncated { offset: len, needed: PREAMBLE_LEN as u64 - len });
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(StoreError::ReservedNonZero);
    }
    let header_len = read_u64(bytes, 8);
    let available = len - PREAMBLE_LEN as u64;
    if header_len > available {
        return Err(StoreError::Truncated { offset: len, needed: header_len - available });
    }
    let header_end = PREAMBLE_LEN + header_len as usize;
    let header = &bytes[PREAMBLE_LEN..header_end];
    let header_err = |message: String| StoreError::Header { offset: PREAMBLE_LEN as u64, message };
    let text = std::str::from_utf8(header).map_err(|e| header_err(e.to_string()))?;
    let HeaderEntries(entries) = serde_json::from_str(text).map_err(|e| header_err(e.to_string()))?;

    let data = &bytes[header_end..];
    let data_start = header_end as u64;
    let mut store = TensorStore::new();
    let mut cursor = 0u64;
    let mut previous: Option<&str> = None;
    for (name, entry) in &entries {
        let header_at = PREAMBLE_LEN as u64;
        if name.is_empty() {
            return Err(StoreError::EmptyName { offset: header_at });
        }
        if let Some(prev) = previous {
            if name.as_str() <= prev {
                return Err(StoreError::Unsorted {
                    name: name.clone(),
                    previous: prev.to_string(),
                    offset: header_at,
                });
            }
        }
        previous = Some(name);
        let dtype = match entry.dtype.as_str() {
            "f32" => DType::F32,
            other => {
                return Err(StoreError::UnknownDtype {
                    name: name.clone(),
                    dtype: other.to_string(),
                    offset: header_at,
                })
            }
        };
        let at = data_start + entry.offset_begin;
        if entry.offset_begin < cursor {
            return Err(StoreError::Overlap { name: name.clone(), offset: at, expected: cursor });
        }
        if entry.offset_begin > cursor {
            return Err(StoreError::Gap { name: name.clone(), offset: at, expected: cursor });
        }
        if entry.offset_end < entry.offset_begin {
            return Err(StoreError::InvertedRange { name: name.clone(), offset: at });
        }
        let actual = entry.offset_end - entry.offset_begin;
        let expected = entry
            .shape
            .iter()
            .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d as u64));
        if expected != Some(actual) {
            return Err(StoreError::ShapeMismatch {
                name: name.clone(),
                shape: entry.shape.clone(),
                offset: at,
                expected: expected.unwrap_or(u64::MAX),
                actual,
            });
        }
        if entry.offset_end > data.len() as u64 {
            return Err(StoreError::Truncated {
                offset: len,
                needed: entry.offset_end - data.len() as u64,
            });
        }
        let raw = &data[entry.offset_begin as usize..entry.offset_end as usize];
        let mut values = Vec::with_capacity(raw.len() / 4);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(StoreError::NonFinite { name: name.clone(), offset: at + 4 * i as u64 });
            }
            values.push(v);
        }
        store.entries.insert(
            name.clone(),
            Tensor { dtype, shape: entry.shape.clone(), data: values },
        );
        cursor = entry.offset_end;
    }
    if cursor != data.len() as u64 {
        return Err(StoreError::TrailingBytes {
            offset: data_start + cursor,
            count: data.len() as u64 - cursor,
        });
    }
    Ok(store)
}

/// Canonical serialization: name order, contiguous data, compact header.
pub fn write_store(store: &TensorStore) -> Vec<u8> {
    let mut header = String::from("{");
    let mut offset = 0u64;
    for (i, (name, tensor)) in store.entries.iter().enumerate() {
        if i > 0 {
            header.push(',');
        }
        let nbytes = (tensor.data.len() * tensor.dtype.size()) as u64;
        let shape = tensor.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        header.push_str(&format!(
            "{}:{{\"dtype\":\"{}\",\"shape\":[{}],\"offset_begin\":{},\"offset_end\":{}}}",
            serde_json::to_string(name).expect("string serialization is infallible"),
            tensor.dtype.as_str(),
            shape,
            offset,
            offset + nbytes
        ));
        offset += nbytes;
    }
    header.push('}');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for tensor in store.entries.values() {
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorStore {
        let mut s = TensorStore::new();
        s.insert("b.weight", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        s.insert("a.bias", Tensor::new(vec![3], vec![-1.5, 0.0, 2.25]).unwrap()).unwrap();
        s.insert("scalar", Tensor::new(vec![], vec![7.0]).unwrap()).unwrap();
        s.insert("empty", Tensor::new(vec![0, 5], vec![]).unwrap()).unwrap();
        s
    }

    /// Assembles a container from a raw header string and data payload.
    fn assemble(header: &str, data: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(data);
        out
    }

    fn floats(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn empty_store_round_trip() {
        let bytes = write_store(&TensorStore::new());
        assert_eq!(bytes.len(), 18);
        assert_eq!(&bytes[16..], b"{}");
        assert!(parse_store(&bytes).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_lossless_and_canonical() {
        let s = sample();
        let bytes = write_store(&s);
        let parsed = parse_store(&bytes).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(write_store(&parsed), bytes);
        let names: Vec<_> = parsed.entries.keys().cloned().collect();
        assert_eq!(names, ["a.bias", "b.weight", "empty", "scalar"]);
    }

    #[test]
    fn two_by_two_has_sixteen_data_bytes() {
        let mut s = TensorStore::new();
        s.insert("w", Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap()).unwrap();
        let bytes = write_store(&s);
        let header_len = read_u64(&bytes, 8) as usize;
        assert_eq!(bytes.len() - 16 - header_len, 16);
    }

    #[test]
    fn exact_header_text() {
        let mut s = TensorStore::new();
        s.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let bytes = write_store(&s);
        let expected = assemble(
            r#"{"w":{"dtype":"f32","shape":[2],"offset_begin":0,"offset_end":8}}"#,
            &floats(&[1.0, 2.0]),
        );
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_payload() {
        let bytes = assemble(
            r#"{"w":{"dtype":"f32","shape":[8],"offset_begin":0,"offset_end":32}}"#,
            &floats(&[1.0; 4]),
        );
        assert!(matches!(parse_store(&bytes), Err(StoreError::Truncated { needed: 16, .. })));
    }

    #[test]
    fn truncated_preamble_and_header() {
        assert!(matches!(parse_store(b"TST"), Err(StoreError::Truncated { .. })));
        assert!(matches!(parse_store(b"TSTOR1\0\0"), Err(StoreError::Truncated { .. })));
        let mut bytes = assemble("{}", &[]);
        bytes.truncate(17);
        assert!(matches!(parse_store(&bytes), Err(StoreError::Truncated { .. })));
    }

    #[test]
    fn bad_magic_and_reserved() {
        let mut bytes = write_store(&sample());
        bytes[0] = b'X';
        assert_eq!(parse_store(&bytes), Err(StoreError::BadMagic));
        let mut bytes = write_store(&sample());
        bytes[7] = 1;
        assert_eq!(parse_store(&bytes), Err(StoreError::ReservedNonZero));
    }

    #[test]
    fn unknown_dtype() {
        let bytes = assemble(
            r#"{"w":{"dtype":"bf16","shape":[1],"offset_begin":0,"offset_end":2}}"#,
            &[0, 0],
        );
        assert!(matches!(parse_store(&bytes), Err(StoreError::UnknownDtype { .. })));
    }

    #[test]
    fn overlapping_ranges() {
        let bytes = assemble(
            concat!(
                r#"{"a":{"dtype":"f32","shape":[2],"offset_begin":0,"offset_end":8},"#,
                r#""b":{"dtype":"f32","shape":[2],"offset_begin":4,"offset_end":12}}"#
            ),
            &floats(&[1.0, 2.0, 3.0]),
        );
        let err = parse_store(&bytes).unwrap_err();
        assert!(matches!(err, StoreError::Overlap { expected: 8, .. }), "{err:?}");
    }

    #[test]
    fn unsorted_names() {
        let bytes = assemble(
            concat!(
                r#"{"b":{"dtype":"f32","shape":[1],"offset_begin":0,"offset_end":4},"#,
                r#""a":{"dtype":"f32","shape":[1],"offset_begin":4,"offset_end":8}}"#
            ),
            &floats(&[1.0, 2.0]),
        );
        assert!(matches!(parse_store(&bytes), Err(StoreError::Unsorted { .. })));
    }

    #[test]
    fn gap_and_trailing_bytes() {
        let gap = assemble(
            r#"{"a":{"dtype":"f32","shape":[1],"offset_begin":4,"offset_end":8}}"#,
            &floats(&[1.0, 2.0]),
        );
        assert!(matches!(parse_store(&gap), Err(StoreError::Gap { .. })));
        let trailing = assemble(
            r#"{"a":{"dtype":"f32","shape":[1],"offset_begin":0,"offset_end":4}}"#,
            &floats(&[1.0, 2.0]),
        );
        assert!(matches!(
            parse_store(&trailing),
            Err(StoreError::TrailingBytes { count: 4, .. })
        ));
    }

    #[test]
    fn shape_size_mismatch() {
        let bytes = assemble(
            r#"{"a":{"dtype":"f32","shape":[3],"offset_begin":0,"offset_end":8}}"#,
            &floats(&[1.0, 2.0]),
        );
        assert!(matches!(parse_store(&bytes), Err(StoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_rejected_with_offset() {
        let header = r#"{"a":{"dtype":"f32","shape":[2],"offset_begin":0,"offset_end":8}}"#;
        let bytes = assemble(header, &floats(&[1.0, f32::NAN]));
        let err = parse_store(&bytes).unwrap_err();
        assert_eq!(
            err,
            StoreError::NonFinite { name: "a".into(), offset: (16 + header.len() + 4) as u64 }
        );
    }

    #[test]
    fn duplicate_and_empty_names() {
        let dup = assemble(
            concat!(
                r#"{"a":{"dtype":"f32","shape":[1],"offset_begin":0,"offset_end":4},"#,
                r#""a":{"dtype":"f32","shape":[1],"offset_begin":4,"offset_end":8}}"#
            ),
            &floats(&[1.0, 2.0]),
        );
        assert!(matches!(parse_store(&dup), Err(StoreError::Header { .. })));
        let empty = assemble(
            r#"{"":{"dtype":"f32","shape":[1],"offset_begin":0,"offset_end":4}}"#,
            &floats(&[1.0]),
        );
        assert!(matches!(parse_store(&empty), Err(StoreError::EmptyName { .. })));
    }

    #[test]
    fn insert_validates() {
        let mut s = TensorStore::new();
        assert!(Tensor::new(vec![2], vec![1.0]).is_err());
        assert!(Tensor::new(vec![1], vec![f32::INFINITY]).is_err());
        assert!(s.insert("", Tensor::new(vec![1], vec![1.0]).unwrap()).is_err());
    }
}
