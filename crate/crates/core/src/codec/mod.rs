//! Per-group encoders and the method selection rule.

pub mod huffman;
pub mod lz;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::zero_stats;
use crate::error::{Error, Result};

pub use huffman::{huffman_compress, huffman_decompress, HuffmanTable};
pub use lz::{lz_entropy_compress, lz_entropy_decompress};

/// Encoding tag stored per (chunk, group) in the container table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Method {
    Stored = 0,
    Huffman = 1,
    LzEntropy = 2,
    ZeroTruncated = 3,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Stored,
        Method::Huffman,
        Method::LzEntropy,
        Method::ZeroTruncated,
    ];

    pub fn from_tag(tag: u8) -> Option<Method> {
        match tag {
            0 => Some(Method::Stored),
            1 => Some(Method::Huffman),
            2 => Some(Method::LzEntropy),
            3 => Some(Method::ZeroTruncated),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Stored => "stored",
            Method::Huffman => "huffman",
            Method::LzEntropy => "lz_entropy",
            Method::ZeroTruncated => "zero_truncated",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of encoding one byte group of one chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupEncoding {
    pub method: Method,
    pub payload: Vec<u8>,
    pub raw_len: usize,
}

impl GroupEncoding {
    pub fn stored(input: &[u8]) -> Self {
        GroupEncoding {
            method: Method::Stored,
            payload: input.to_vec(),
            raw_len: input.len(),
        }
    }

    pub fn zero_truncated(raw_len: usize) -> Self {
        GroupEncoding {
            method: Method::ZeroTruncated,
            payload: Vec::new(),
            raw_len,
        }
    }

    /// Payload bytes over raw bytes; 0 for empty groups.
    pub fn ratio(&self) -> f64 {
        if self.raw_len == 0 {
            0.0
        } else {
            self.payload.len() as f64 / self.raw_len as f64
        }
    }
}

/// How the encoder picks a method for each group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Huffman everywhere; the usual choice for standalone weights.
    Model,
    /// Choose between Huffman and LZ from the zero statistics of each group.
    DeltaAuto,
    ForceHuffman,
    ForceLz,
    /// Store every group verbatim.
    ForceStored,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(SelectionMode::Model),
            "auto" | "delta_auto" => Ok(SelectionMode::DeltaAuto),
            "huffman" => Ok(SelectionMode::ForceHuffman),
            "lz" => Ok(SelectionMode::ForceLz),
            "stored" => Ok(SelectionMode::ForceStored),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Groups with more zeros than this go to the LZ backend in auto mode.
pub const AUTO_ZERO_FRACTION: f64 = 0.90;
/// A single zero run at least this fraction of the group also selects LZ.
pub const AUTO_ZERO_RUN_FRACTION: f64 = 0.03;

pub fn select_method(input: &[u8], mode: SelectionMode) -> Result<Method> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(match mode {
        SelectionMode::Model | SelectionMode::ForceHuffman => Method::Huffman,
        SelectionMode::ForceLz => Method::LzEntropy,
        SelectionMode::ForceStored => Method::Stored,
        SelectionMode::DeltaAuto => {
            let (zero_fraction, longest_run) = zero_stats(input)?;
            if zero_fraction > AUTO_ZERO_FRACTION
                || longest_run as f64 >= AUTO_ZERO_RUN_FRACTION * input.len() as f64
            {
                Method::LzEntropy
            } else {
                Method::Huffman
            }
        }
    })
}

pub(crate) fn is_all_zero(data: &[u8]) -> bool {
    let mut words = data.chunks_exact(16);
    words.all(|w| u128::from_ne_bytes(w.try_into().unwrap()) == 0)
        && words.remainder().iter().all(|&b| b == 0)
}

/// Encodes one group with the given method. All-zero groups become
/// `ZeroTruncated` under every method except `Stored`.
pub fn encode_group(input: &[u8], method: Method) -> Result<GroupEncoding> {
    if input.is_empty() {
        return Ok(GroupEncoding::stored(input));
    }
    match method {
        Method::Stored => Ok(GroupEncoding::stored(input)),
        _ if is_all_zero(input) => Ok(GroupEncoding::zero_truncated(input.len())),
        Method::Huffman => huffman_compress(input),
        Method::LzEntropy => lz_entropy_compress(input),
        Method::ZeroTruncated => Err(Error::InvalidConfig(
            "zero truncation applies only to all-zero groups".into(),
        )),
    }
}

pub fn decode_group_into(method: Method, payload: &[u8], out: &mut [u8]) -> Result<()> {
    match method {
        Method::Stored => {
            if payload.len() != out.len() {
                return Err(Error::LengthMismatch {
                    expected: out.len() as u64,
                    actual: payload.len() as u64,
                });
            }
            out.copy_from_slice(payload);
        }
        Method::ZeroTruncated => {
            if !payload.is_empty() {
                return Err(Error::corrupt("zero-truncated group carries payload"));
            }
            out.fill(0);
        }
        Method::Huffman => huffman::huffman_decompress_into(payload, out)?,
        Method::LzEntropy => lz::lz_entropy_decompress_into(payload, out)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CHUNK: usize = 256 * 1024;

    /// Places `zeros` zero bytes with no run longer than `max_run`; others 0x5A.
    fn scattered_zeros(len: usize, zeros: usize, max_run: usize) -> Vec<u8> {
        let mut v = vec![0x5Au8; len];
        let mut placed = 0;
        let mut i = 0;
        while placed < zeros {
            let run = max_run.min(zeros - placed);
            v[i..i + run].fill(0);
            placed += run;
            i += run + 1;
        }
        v
    }

    #[test]
    fn auto_picks_lz_above_ninety_percent_zeros() {
        let input = scattered_zeros(CHUNK, CHUNK * 95 / 100, 64);
        assert_eq!(select_method(&input, SelectionMode::DeltaAuto).unwrap(), Method::LzEntropy);
    }

    #[test]
    fn auto_picks_huffman_below_both_thresholds() {
        let input = scattered_zeros(CHUNK, CHUNK / 2, 1024);
        let (frac, run) = zero_stats(&input).unwrap();
        assert_eq!((frac, run), (0.5, 1024));
        assert_eq!(select_method(&input, SelectionMode::DeltaAuto).unwrap(), Method::Huffman);
    }

    #[test]
    fn auto_picks_lz_for_one_long_run() {
        let mut input = scattered_zeros(CHUNK, CHUNK / 2 - 8192, 1024);
        let tail = CHUNK - 8192;
        input[tail..].fill(0);
        let (frac, run) = zero_stats(&input).unwrap();
        assert!((frac - 0.5).abs() < 0.01);
        assert_eq!(run, 8192);
        assert_eq!(select_method(&input, SelectionMode::DeltaAuto).unwrap(), Method::LzEntropy);
    }

    #[test]
    fn fixed_modes() {
        let x = [1u8, 0, 0];
        assert_eq!(select_method(&x, SelectionMode::Model).unwrap(), Method::Huffman);
        assert_eq!(select_method(&x, SelectionMode::ForceHuffman).unwrap(), Method::Huffman);
        assert_eq!(select_method(&x, SelectionMode::ForceLz).unwrap(), Method::LzEntropy);
        assert_eq!(select_method(&x, SelectionMode::ForceStored).unwrap(), Method::Stored);
        assert!(matches!(select_method(&[], SelectionMode::Model), Err(Error::EmptyInput)));
    }

    #[test]
    fn tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_tag(m.tag()), Some(m));
        }
        assert_eq!(Method::from_tag(4), None);
    }

    #[test]
    fn zero_truncated_rejects_payload() {
        let mut out = [1u8; 4];
        assert!(decode_group_into(Method::ZeroTruncated, &[0], &mut out).is_err());
        decode_group_into(Method::ZeroTruncated, &[], &mut out).unwrap();
        assert_eq!(out, [0; 4]);
    }

    proptest! {
        #[test]
        fn never_expands_and_round_trips(
            data in prop::collection::vec(prop_oneof![3 => Just(0u8), 1 => any::<u8>(), 2 => 120u8..124], 1..3000),
            method in prop::sample::select(vec![Method::Stored, Method::Huffman, Method::LzEntropy]),
        ) {
            let enc = encode_group(&data, method).unwrap();
            prop_assert!(enc.payload.len() <= data.len());
            prop_assert_eq!(enc.raw_len, data.len());
            if enc.method == Method::Huffman {
                prop_assert!(enc.payload.len() < data.len());
            }
            let mut out = vec![0xEEu8; data.len()];
            decode_group_into(enc.method, &enc.payload, &mut out).unwrap();
            prop_assert_eq!(out, data);
        }
    }
}
