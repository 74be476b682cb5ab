//! Canonical byte-level Huffman coding with code lengths capped at 12 bits.
//!
//! Payload layout: 128 bytes holding the 256 code lengths as packed nibbles
//! (symbol `2i` in the low nibble of byte `i`, symbol `2i + 1` in the high
//! nibble), followed by the code bits packed LSB-first. Codes are assigned
//! canonically by (length, symbol) and written first-bit-first, so the
//! decoder can resolve any symbol with one 4096-entry table lookup. At most
//! 7 zero padding bits follow the last code.

use super::{GroupEncoding, Method};
use crate::error::{Error, Result};

pub const MAX_CODE_LEN: usize = 12;
pub const TABLE_BYTES: usize = 128;

const LUT_BITS: usize = MAX_CODE_LEN;
const LUT_SIZE: usize = 1 << LUT_BITS;
const LUT_MASK: u64 = (LUT_SIZE - 1) as u64;

pub fn histogram(data: &[u8]) -> [u64; 256] {
    // four interleaved tables hide the store-to-load dependency on runs
    let mut h = [[0u32; 256]; 4];
    let mut chunks = data.chunks_exact(4);
    for c in &mut chunks {
        h[0][c[0] as usize] += 1;
        h[1][c[1] as usize] += 1;
        h[2][c[2] as usize] += 1;
        h[3][c[3] as usize] += 1;
    }
    for &b in chunks.remainder() {
        h[0][b as usize] += 1;
    }
    let mut out = [0u64; 256];
    for (s, o) in out.iter_mut().enumerate() {
        *o = h.iter().map(|t| t[s] as u64).sum();
    }
    out
}

/// Code lengths for all 256 byte values; zero means the symbol is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    lengths: [u8; 256],
}

impl HuffmanTable {
    /// Builds an optimal length-limited code with package-merge. Ties in
    /// weight are broken by symbol value so the result is deterministic.
    pub fn from_histogram(hist: &[u64; 256]) -> Self {
        let mut leaves: Vec<(u64, u8)> = hist
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0)
            .map(|(s, &f)| (f, s as u8))
            .collect();
        leaves.sort_unstable();

        let mut lengths = [0u8; 256];
        match leaves.len() {
            0 => return HuffmanTable { lengths },
            1 => {
                lengths[leaves[0].1 as usize] = 1;
                return HuffmanTable { lengths };
            }
            _ => {}
        }

        #[derive(Clone, Copy)]
        struct Item {
            weight: u64,
            // index into `leaves`, or u16::MAX for a package
            leaf: u16,
        }
        const PACKAGE: u16 = u16::MAX;

        let base: Vec<Item> = leaves
            .iter()
            .enumerate()
            .map(|(i, &(w, _))| Item { weight: w, leaf: i as u16 })
            .collect();
        let mut levels: Vec<Vec<Item>> = Vec::with_capacity(MAX_CODE_LEN);
        levels.push(base.clone());
        for _ in 1..MAX_CODE_LEN {
            let prev = levels.last().unwrap();
            let packages = prev.chunks_exact(2).map(|p| Item {
                weight: p[0].weight + p[1].weight,
                leaf: PACKAGE,
            });
            let mut merged = Vec::with_capacity(base.len() + prev.len() / 2);
            let mut packages = packages.peekable();
            let mut leaf_iter = base.iter().copied().peekable();
            loop {
                match (leaf_iter.peek(), packages.peek()) {
                    (Some(l), Some(p)) => {
                        if l.weight <= p.weight {
                            merged.push(leaf_iter.next().unwrap());
                        } else {
                            merged.push(packages.next().unwrap());
                        }
                    }
                    (Some(_), None) => merged.push(leaf_iter.next().unwrap()),
                    (None, Some(_)) => merged.push(packages.next().unwrap()),
                    (None, None) => break,
                }
            }
            levels.push(merged);
        }

        // The selected items on each level form a prefix; the packages in
        // that prefix select a prefix twice as long on the level below.
        let mut take = 2 * leaves.len() - 2;
        for level in levels.iter().rev() {
            let mut packages = 0;
            for item in &level[..take] {
                if item.leaf == PACKAGE {
                    packages += 1;
                } else {
                    lengths[leaves[item.leaf as usize].1 as usize] += 1;
                }
            }
            take = 2 * packages;
        }
        HuffmanTable { lengths }
    }

    pub fn from_lengths(lengths: [u8; 256]) -> Result<Self> {
        if lengths.iter().any(|&l| l as usize > MAX_CODE_LEN) {
            return Err(Error::CorruptTable("code length exceeds 12 bits"));
        }
        if lengths.iter().all(|&l| l == 0) {
            return Err(Error::CorruptTable("no symbols"));
        }
        let table = HuffmanTable { lengths };
        if table.kraft_units() > LUT_SIZE as u64 {
            return Err(Error::CorruptTable("kraft sum exceeds 1"));
        }
        Ok(table)
    }

    pub fn lengths(&self) -> &[u8; 256] {
        &self.lengths
    }

    /// Kraft sum scaled by 2^12, so a complete code sums to exactly 4096.
    pub fn kraft_units(&self) -> u64 {
        self.lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 1u64 << (MAX_CODE_LEN - l as usize))
            .sum()
    }

    /// Canonical code values, most-significant bit first.
    pub fn codes(&self) -> [u16; 256] {
        let mut count = [0u16; MAX_CODE_LEN + 1];
        for &l in &self.lengths {
            if l > 0 {
                count[l as usize] += 1;
            }
        }
        let mut next = [0u16; MAX_CODE_LEN + 1];
        let mut code = 0u16;
        for len in 1..=MAX_CODE_LEN {
            next[len] = code;
            code = (code + count[len]) << 1;
        }
        let mut codes = [0u16; 256];
        for (s, &l) in self.lengths.iter().enumerate() {
            if l > 0 {
                codes[s] = next[l as usize];
                next[l as usize] += 1;
            }
        }
        codes
    }

    pub fn encoded_bits(&self, hist: &[u64; 256]) -> u64 {
        hist.iter()
            .zip(self.lengths.iter())
            .map(|(&f, &l)| f * l as u64)
            .sum()
    }

    pub fn serialize(&self) -> [u8; TABLE_BYTES] {
        let mut out = [0u8; TABLE_BYTES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.lengths[2 * i] | (self.lengths[2 * i + 1] << 4);
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TABLE_BYTES {
            return Err(Error::TruncatedPayload);
        }
        let mut lengths = [0u8; 256];
        for (i, &b) in bytes[..TABLE_BYTES].iter().enumerate() {
            lengths[2 * i] = b & 0x0F;
            lengths[2 * i + 1] = b >> 4;
        }
        Self::from_lengths(lengths)
    }

    /// (bit-reversed code, length) per symbol, ready for LSB-first packing.
    fn encoder(&self) -> [(u16, u8); 256] {
        let codes = self.codes();
        let mut enc = [(0u16, 0u8); 256];
        for s in 0..256 {
            let l = self.lengths[s];
            if l > 0 {
                enc[s] = (reverse_bits(codes[s], l), l);
            }
        }
        enc
    }

    /// Lookup table indexed by the next 12 stream bits; each entry holds
    /// `symbol | length << 8`, zero marks an unused code.
    fn decoder(&self) -> Vec<u16> {
        let codes = self.codes();
        let mut lut = vec![0u16; LUT_SIZE];
        for (s, (&len, &code)) in self.lengths.iter().zip(&codes).enumerate() {
            let l = len as usize;
            if l == 0 {
                continue;
            }
            let entry = s as u16 | (l as u16) << 8;
            let start = reverse_bits(code, len) as usize;
            for idx in (start..LUT_SIZE).step_by(1 << l) {
                lut[idx] = entry;
            }
        }
        lut
    }
}

fn reverse_bits(code: u16, len: u8) -> u16 {
    code.reverse_bits() >> (16 - len as u32)
}

pub fn huffman_compress(input: &[u8]) -> Result<GroupEncoding> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    if super::is_all_zero(input) {
        return Ok(GroupEncoding::zero_truncated(input.len()));
    }
    let hist = histogram(input);
    let table = HuffmanTable::from_histogram(&hist);
    let bits = table.encoded_bits(&hist);
    let size = TABLE_BYTES as u64 + bits.div_ceil(8);
    if size >= input.len() as u64 {
        return Ok(GroupEncoding::stored(input));
    }

    let mut out = Vec::with_capacity(size as usize + 8);
    out.extend_from_slice(&table.serialize());
    let enc = table.encoder();
    let mut acc = 0u64;
    let mut nbits = 0u32;
    for &b in input {
        let (code, len) = enc[b as usize];
        acc |= (code as u64) << nbits;
        nbits += len as u32;
        if nbits >= 32 {
            out.extend_from_slice(&(acc as u32).to_le_bytes());
            acc >>= 32;
            nbits -= 32;
        }
    }
    while nbits > 0 {
        out.push(acc as u8);
        acc >>= 8;
        nbits = nbits.saturating_sub(8);
    }
    debug_assert_eq!(out.len() as u64, size);
    Ok(GroupEncoding {
        method: Method::Huffman,
        payload: out,
        raw_len: input.len(),
    })
}

pub fn huffman_decompress(payload: &[u8], raw_len: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; raw_len];
    huffman_decompress_into(payload, &mut out)?;
    Ok(out)
}

pub(crate) fn huffman_decompress_into(payload: &[u8], out: &mut [u8]) -> Result<()> {
    let table = HuffmanTable::deserialize(payload)?;
    let lut = table.decoder();
    let data = &payload[TABLE_BYTES..];

    let mut acc = 0u64;
    let mut nbits = 0u32;
    let mut pos = 0usize;
    let mut i = 0usize;
    let n = out.len();

    while i < n {
        if pos + 8 <= data.len() {
            let word = u64::from_le_bytes(data[pos..pos + 8].try_into().unwrap());
            acc |= word << nbits;
            let taken = (63 - nbits) / 8;
            pos += taken as usize;
            nbits += taken * 8;
        } else {
            while nbits <= 56 && pos < data.len() {
                acc |= (data[pos] as u64) << nbits;
                pos += 1;
                nbits += 8;
            }
        }

        if nbits as usize >= 4 * MAX_CODE_LEN {
            let end = (i + 4).min(n);
            while i < end {
                let e = lut[(acc & LUT_MASK) as usize];
                if e == 0 {
                    return Err(Error::corrupt("invalid huffman code"));
                }
                let len = (e >> 8) as u32;
                acc >>= len;
                nbits -= len;
                out[i] = e as u8;
                i += 1;
            }
        } else {
            // the stream is fully loaded; anything above `nbits` is zero
            let e = lut[(acc & LUT_MASK) as usize];
            if e == 0 {
                if nbits as usize >= MAX_CODE_LEN {
                    return Err(Error::corrupt("invalid huffman code"));
                }
                return Err(Error::TruncatedPayload);
            }
            let len = (e >> 8) as u32;
            if len > nbits {
                return Err(Error::TruncatedPayload);
            }
            acc >>= len;
            nbits -= len;
            out[i] = e as u8;
            i += 1;
        }
    }

    let leftover = nbits as u64 + 8 * (data.len() - pos) as u64;
    if leftover >= 8 {
        return Err(Error::ExcessBits(leftover));
    }
    if acc & ((1u64 << nbits) - 1) != 0 {
        return Err(Error::corrupt("nonzero padding bits"));
    }
    Ok(())
}
