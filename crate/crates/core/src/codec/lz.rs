//! LZ + entropy backend, used for zero-heavy delta streams.
//!
//! Backed by zstd. Backend id 0 in the container flags refers to this
//! encoder; the payload is a single zstd frame.

use super::{GroupEncoding, Method};
use crate::error::{Error, Result};

/// Backend identifier recorded in the upper nibble of the header flags.
pub const DEFAULT_BACKEND: u8 = 0;

const LEVEL: i32 = 3;

pub fn lz_entropy_compress(input: &[u8]) -> Result<GroupEncoding> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let payload = zstd::bulk::compress(input, LEVEL)?;
    if payload.len() >= input.len() {
        return Ok(GroupEncoding::stored(input));
    }
    Ok(GroupEncoding {
        method: Method::LzEntropy,
        payload,
        raw_len: input.len(),
    })
}

pub fn lz_entropy_decompress(payload: &[u8], raw_len: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; raw_len];
    lz_entropy_decompress_into(payload, &mut out)?;
    Ok(out)
}

pub(crate) fn lz_entropy_decompress_into(payload: &[u8], out: &mut [u8]) -> Result<()> {
    let mut dctx = zstd::bulk::Decompressor::new()?;
    let n = dctx
        .decompress_to_buffer(payload, out)
        .map_err(|e| Error::corrupt(format!("lz backend: {e}")))?;
    if n != out.len() {
        return Err(Error::corrupt(format!(
            "lz backend produced {n} bytes, expected {}",
            out.len()
        )));
    }
    Ok(())
}
