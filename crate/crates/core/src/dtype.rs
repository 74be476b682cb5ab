//! Element type descriptors.
//!
//! Every dtype knows its IEEE bit layout and how many byte groups the
//! regrouping transform splits it into. Anything that is not one of the
//! three supported float formats is handled as `Opaque`: a single stream
//! of bytes with no transform applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum DType {
    Opaque = 0,
    Fp32 = 1,
    Bf16 = 2,
    Fp16 = 3,
}

impl DType {
    pub const ALL: [DType; 4] = [DType::Opaque, DType::Fp32, DType::Bf16, DType::Fp16];

    /// Largest element size of any dtype. Chunk sizes that are a multiple of
    /// `8 * MAX_ELEMENT_BYTES` are valid for every dtype.
    pub const MAX_ELEMENT_BYTES: usize = 4;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::Opaque),
            1 => Some(DType::Fp32),
            2 => Some(DType::Bf16),
            3 => Some(DType::Fp16),
            _ => None,
        }
    }

    pub fn element_bytes(self) -> usize {
        match self {
            DType::Opaque => 1,
            DType::Fp32 => 4,
            DType::Bf16 | DType::Fp16 => 2,
        }
    }

    pub fn group_count(self) -> usize {
        self.element_bytes()
    }

    pub fn is_float(self) -> bool {
        self != DType::Opaque
    }

    pub fn sign_bits(self) -> u32 {
        match self {
            DType::Opaque => 0,
            _ => 1,
        }
    }

    pub fn exponent_bits(self) -> u32 {
        match self {
            DType::Opaque => 0,
            DType::Fp32 | DType::Bf16 => 8,
            DType::Fp16 => 5,
        }
    }

    pub fn fraction_bits(self) -> u32 {
        match self {
            DType::Opaque => 0,
            DType::Fp32 => 23,
            DType::Bf16 => 7,
            DType::Fp16 => 10,
        }
    }

    /// Granularity every chunk size must respect for this dtype.
    pub fn chunk_granularity(self) -> usize {
        8 * self.element_bytes()
    }

    /// Maps a safetensors dtype string. Unknown and integer types fall back
    /// to `Opaque`.
    pub fn from_safetensors(name: &str) -> DType {
        match name {
            "F32" => DType::Fp32,
            "BF16" => DType::Bf16,
            "F16" => DType::Fp16,
            _ => DType::Opaque,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Opaque => "opaque",
            DType::Fp32 => "fp32",
            DType::Bf16 => "bf16",
            DType::Fp16 => "fp16",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "opaque" => Ok(DType::Opaque),
            "fp32" | "f32" => Ok(DType::Fp32),
            "bf16" => Ok(DType::Bf16),
            "fp16" | "f16" => Ok(DType::Fp16),
            other => Err(Error::InvalidConfig(format!("unknown dtype `{other}`"))),
        }
    }
}
