//! Exponent extraction and byte grouping.
//!
//! Each element's most-significant 16 bits are rotated left by one, which
//! drops the sign bit below the exponent and leaves the exponent byte-aligned
//! at the top of the element. The element's bytes are then dealt out
//! most-significant first into one stream per byte position, so group 0 is
//! the exponent stream for FP32 and BF16 (FP16 carries its 5 exponent bits
//! plus 3 fraction bits there).
//!
//! For the 16-bit types this is a plain 1-bit rotation of the whole element.
//! For FP32 the lower two bytes are left untouched so that fraction bytes
//! zeroed by a format conversion stay all-zero streams.

use crate::dtype::DType;
use crate::error::{Error, Result};

/// One chunk split into its per-byte-position streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedChunk {
    pub groups: Vec<Vec<u8>>,
    pub element_count: usize,
    pub dtype: DType,
}

impl GroupedChunk {
    pub fn group(&self, index: usize) -> &[u8] {
        &self.groups[index]
    }
}

pub fn regroup(chunk: &[u8], dtype: DType) -> Result<GroupedChunk> {
    let width = dtype.element_bytes();
    if !chunk.len().is_multiple_of(width) {
        return Err(Error::MisalignedInput {
            len: chunk.len() as u64,
            element_bytes: width,
        });
    }
    let element_count = chunk.len() / width;
    let mut groups: Vec<Vec<u8>> = (0..dtype.group_count())
        .map(|_| vec![0u8; element_count])
        .collect();
    {
        let mut slices: Vec<&mut [u8]> = groups.iter_mut().map(|g| g.as_mut_slice()).collect();
        regroup_into(chunk, dtype, &mut slices);
    }
    Ok(GroupedChunk {
        groups,
        element_count,
        dtype,
    })
}

pub fn ungroup(grouped: &GroupedChunk) -> Result<Vec<u8>> {
    let element_count = grouped.groups.first().map_or(0, Vec::len);
    if grouped.groups.len() != grouped.dtype.group_count() {
        return Err(Error::LengthMismatch {
            expected: grouped.dtype.group_count() as u64,
            actual: grouped.groups.len() as u64,
        });
    }
    for g in &grouped.groups {
        if g.len() != element_count {
            return Err(Error::LengthMismatch {
                expected: element_count as u64,
                actual: g.len() as u64,
            });
        }
    }
    let mut out = vec![0u8; element_count * grouped.dtype.element_bytes()];
    let slices: Vec<&[u8]> = grouped.groups.iter().map(Vec::as_slice).collect();
    ungroup_into(&slices, grouped.dtype, &mut out);
    Ok(out)
}

/// Splits `chunk` into `groups`. Lengths must already agree:
/// every group holds `chunk.len() / element_bytes` bytes.
pub(crate) fn regroup_into(chunk: &[u8], dtype: DType, groups: &mut [&mut [u8]]) {
    match dtype {
        DType::Opaque => groups[0].copy_from_slice(chunk),
        DType::Bf16 | DType::Fp16 => {
            let (g0, rest) = groups.split_first_mut().unwrap();
            let g1 = &mut rest[0];
            for (i, e) in chunk.chunks_exact(2).enumerate() {
                let r = u16::from_le_bytes([e[0], e[1]]).rotate_left(1);
                g0[i] = (r >> 8) as u8;
                g1[i] = r as u8;
            }
        }
        DType::Fp32 => {
            let [g0, g1, g2, g3] = groups else {
                unreachable!("fp32 has four groups")
            };
            for (i, e) in chunk.chunks_exact(4).enumerate() {
                let hi = u16::from_le_bytes([e[2], e[3]]).rotate_left(1);
                g0[i] = (hi >> 8) as u8;
                g1[i] = hi as u8;
                g2[i] = e[1];
                g3[i] = e[0];
            }
        }
    }
}

pub(crate) fn ungroup_into(groups: &[&[u8]], dtype: DType, out: &mut [u8]) {
    match dtype {
        DType::Opaque => out.copy_from_slice(groups[0]),
        DType::Bf16 | DType::Fp16 => {
            let (g0, g1) = (groups[0], groups[1]);
            for (i, e) in out.chunks_exact_mut(2).enumerate() {
                let v = u16::from_be_bytes([g0[i], g1[i]]).rotate_right(1);
                e.copy_from_slice(&v.to_le_bytes());
            }
        }
        DType::Fp32 => {
            let (g0, g1, g2, g3) = (groups[0], groups[1], groups[2], groups[3]);
            for (i, e) in out.chunks_exact_mut(4).enumerate() {
                let hi = u16::from_be_bytes([g0[i], g1[i]]).rotate_right(1).to_le_bytes();
                e[0] = g3[i];
                e[1] = g2[i];
                e[2] = hi[0];
                e[3] = hi[1];
            }
        }
    }
}
