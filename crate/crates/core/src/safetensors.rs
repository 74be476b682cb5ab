//! Safetensors header parsing and the segment manifest built from it.
//!
//! File layout: an 8-byte little-endian header length `N`, `N` bytes of JSON
//! mapping tensor names to `{dtype, shape, data_offsets}`, then the data
//! region. Offsets are relative to the start of the data region.

use std::collections::BTreeMap;
use std::io::Read;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::format::{Manifest, Segment};

/// Largest JSON header accepted.
pub const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

pub const HEADER_SEGMENT: &str = "__header__";
const GAP_SEGMENT: &str = "__gap__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpan {
    pub name: String,
    /// The dtype string as written in the file, e.g. `BF16`.
    pub dtype: String,
    pub shape: Vec<u64>,
    /// Byte range within the data region.
    pub byte_range: Range<u64>,
}

impl TensorSpan {
    pub fn len(&self) -> u64 {
        self.byte_range.end - self.byte_range.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        DType::from_safetensors(&self.dtype)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetensorsLayout {
    /// Length of the JSON header, excluding the 8-byte prefix.
    pub header_len: u64,
    /// Tensors ordered by their position in the data region.
    pub tensors: Vec<TensorSpan>,
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn element_size(dtype: &str) -> Option<u64> {
    Some(match dtype {
        "F64" | "I64" | "U64" => 8,
        "F32" | "I32" | "U32" => 4,
        "F16" | "BF16" | "I16" | "U16" => 2,
        "I8" | "U8" | "BOOL" | "F8_E4M3" | "F8_E5M2" => 1,
        _ => return None,
    })
}

impl SafetensorsLayout {
    /// Offset of the data region within the file.
    pub fn data_start(&self) -> u64 {
        8 + self.header_len
    }

    /// Parses the JSON header. `data_len` is the size of the data region.
    pub fn from_json(header_len: u64, json: &[u8], data_len: u64) -> Result<Self> {
        let map: BTreeMap<String, serde_json::Value> =
            serde_json::from_slice(json).map_err(|e| malformed(format!("header is not a JSON object: {e}")))?;
        let mut tensors = Vec::with_capacity(map.len());
        for (name, value) in map {
            if name == "__metadata__" {
                continue;
            }
            let raw: RawEntry =
                serde_json::from_value(value).map_err(|e| malformed(format!("tensor `{name}`: {e}")))?;
            let [start, end] = raw.data_offsets;
            if start > end {
                return Err(malformed(format!("tensor `{name}` ends before it starts")));
            }
            if end > data_len {
                return Err(Error::SpanOutOfBounds(format!(
                    "tensor `{name}` ends at {end}, data region is {data_len} bytes"
                )));
            }
            if let Some(width) = element_size(&raw.dtype) {
                let elems = raw
                    .shape
                    .iter()
                    .try_fold(1u64, |a, &d| a.checked_mul(d))
                    .ok_or(Error::Overflow)?;
                if elems.checked_mul(width) != Some(end - start) {
                    return Err(malformed(format!(
                        "tensor `{name}` has {} bytes for shape {:?} of {}",
                        end - start,
                        raw.shape,
                        raw.dtype
                    )));
                }
            }
            tensors.push(TensorSpan {
                name,
                dtype: raw.dtype,
                shape: raw.shape,
                byte_range: start..end,
            });
        }
        tensors.sort_by(|a, b| {
            (a.byte_range.start, a.byte_range.end, &a.name).cmp(&(b.byte_range.start, b.byte_range.end, &b.name))
        });
        for w in tensors.windows(2) {
            if w[1].byte_range.start < w[0].byte_range.end {
                return Err(Error::OverlappingSpans(format!("`{}` and `{}`", w[0].name, w[1].name)));
            }
        }
        Ok(SafetensorsLayout { header_len, tensors })
    }

    /// Reads the length prefix and JSON header. `file_len` is the size of the
    /// whole file.
    pub fn read<R: Read>(mut r: R, file_len: u64) -> Result<Self> {
        let mut prefix = [0u8; 8];
        r.read_exact(&mut prefix)
            .map_err(|_| malformed("file shorter than the 8-byte length prefix"))?;
        let n = u64::from_le_bytes(prefix);
        if n > MAX_HEADER_LEN {
            return Err(malformed(format!("header length {n} exceeds {MAX_HEADER_LEN}")));
        }
        if 8 + n > file_len {
            return Err(malformed("header runs past the end of the file"));
        }
        let mut json = vec![0u8; n as usize];
        r.read_exact(&mut json)?;
        Self::from_json(n, &json, file_len - 8 - n)
    }

    /// Segments covering the whole file: the header, each tensor, and any
    /// bytes between or after tensors.
    pub fn manifest(&self, file_len: u64) -> Manifest {
        let start = self.data_start();
        let mut h = Segment::new(HEADER_SEGMENT, DType::Opaque, 0, start);
        h.stored = true;
        let mut segments = vec![h];
        let mut pos = start;
        let gap = |from: u64, to: u64, segments: &mut Vec<Segment>| {
            if to > from {
                segments.push(Segment::new(GAP_SEGMENT, DType::Opaque, from, to - from));
            }
        };
        for t in self.tensors.iter().filter(|t| !t.is_empty()) {
            let off = start + t.byte_range.start;
            gap(pos, off, &mut segments);
            segments.push(Segment::new(t.name.clone(), t.dtype(), off, t.len()));
            pos = off + t.len();
        }
        gap(pos, file_len, &mut segments);
        Manifest { segments }
    }
}

/// Parses a complete in-memory safetensors file.
pub fn parse_safetensors(bytes: &[u8]) -> Result<SafetensorsLayout> {
    SafetensorsLayout::read(bytes, bytes.len() as u64)
}

/// Serializes tensors as a safetensors file, packed in the given order.
pub fn write_safetensors(tensors: &[(&str, &str, &[u64], &[u8])]) -> Vec<u8> {
    let mut header = serde_json::Map::new();
    let mut pos = 0u64;
    for (name, dtype, shape, data) in tensors {
        header.insert(
            name.to_string(),
            serde_json::json!({
                "dtype": dtype,
                "shape": shape,
                "data_offsets": [pos, pos + data.len() as u64],
            }),
        );
        pos += data.len() as u64;
    }
    let mut json = serde_json::to_vec(&header).expect("json map serializes");
    while !(8 + json.len()).is_multiple_of(8) {
        json.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + json.len() + pos as usize);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, _, data) in tensors {
        out.extend_from_slice(data);
    }
    out
}
