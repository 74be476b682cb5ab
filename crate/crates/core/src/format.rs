//! The `.znn` container format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ZNN1"
//! 4       1     version (1)
//! 5       1     flags: bit0 delta, bit1 safetensors-aware, bits 2-3 reserved,
//!               bits 4-7 LZ backend id (0 = default)
//! 6       1     dtype code
//! 7       1     group count
//! 8       4     chunk size, u32 LE
//! 12      8     total uncompressed size, u64 LE
//! 20      8     chunk count, u64 LE
//! 28      32    SHA-256 of the base (delta containers only)
//! ..            [safetensors-aware only] manifest: u32 LE length + JSON
//! ..            chunk table: one 5-byte record (method u8, stored_len u32 LE)
//!               per group of every chunk, chunk-major
//! ..            payload: group payloads in table order
//! ..            CRC32C of the payload, u32 LE
//! ```
//!
//! A plain container has a single segment covering the whole input with the
//! header's dtype. Safetensors-aware containers carry a manifest listing one
//! segment per tensor (plus the file header); chunking restarts at every
//! segment boundary and each chunk has as many groups as its segment's dtype.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::codec::Method;
use crate::dtype::DType;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ZNN1";
pub const VERSION: u8 = 1;
pub const FIXED_HEADER_LEN: usize = 28;
pub const DIGEST_LEN: usize = 32;
pub const RECORD_LEN: usize = 5;
pub const CHECKSUM_LEN: usize = 4;
pub const DEFAULT_CHUNK_SIZE: u32 = 256 * 1024;

const FLAG_DELTA: u8 = 0x01;
const FLAG_SAFETENSORS: u8 = 0x02;
const FLAG_RESERVED: u8 = 0x0C;

/// Manifest JSON larger than this is rejected as corrupt.
const MAX_MANIFEST_LEN: u32 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub delta: bool,
    pub safetensors: bool,
    pub backend: u8,
    pub dtype: DType,
    pub chunk_size: u32,
    pub total_size: u64,
    pub chunk_count: u64,
    /// Present exactly when `delta` is set.
    pub base_digest: Option<[u8; 32]>,
}

impl ContainerHeader {
    /// Plain single-segment header with the chunk count derived from sizes.
    pub fn new(dtype: DType, chunk_size: u32, total_size: u64) -> Self {
        let chunk_count = if chunk_size == 0 {
            0
        } else {
            total_size.div_ceil(chunk_size as u64)
        };
        ContainerHeader {
            delta: false,
            safetensors: false,
            backend: crate::codec::lz::DEFAULT_BACKEND,
            dtype,
            chunk_size,
            total_size,
            chunk_count,
            base_digest: None,
        }
    }

    pub fn with_base_digest(mut self, digest: [u8; 32]) -> Self {
        self.delta = true;
        self.base_digest = Some(digest);
        self
    }

    pub fn group_count(&self) -> usize {
        self.dtype.group_count()
    }

    pub fn flags(&self) -> u8 {
        let mut f = self.backend << 4;
        if self.delta {
            f |= FLAG_DELTA;
        }
        if self.safetensors {
            f |= FLAG_SAFETENSORS;
        }
        f
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + if self.delta { DIGEST_LEN } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(Error::InvalidHeader(m.to_string()));
        if self.backend > 0x0F {
            return invalid("backend id does not fit in four bits");
        }
        if self.delta != self.base_digest.is_some() {
            return invalid("base digest must be present exactly for delta containers");
        }
        let granularity = if self.safetensors {
            8 * DType::MAX_ELEMENT_BYTES
        } else {
            self.dtype.chunk_granularity()
        };
        if self.chunk_size == 0 || !(self.chunk_size as usize).is_multiple_of(granularity) {
            return Err(Error::InvalidHeader(format!(
                "chunk size {} is not a positive multiple of {granularity}",
                self.chunk_size
            )));
        }
        if !self.safetensors {
            if !self.total_size.is_multiple_of(self.dtype.element_bytes() as u64) {
                return invalid("total size is not a whole number of elements");
            }
            if self.chunk_count != self.total_size.div_ceil(self.chunk_size as u64) {
                return invalid("chunk count does not match total size");
            }
        } else if self.dtype != DType::Opaque {
            return invalid("safetensors-aware containers carry per-segment dtypes");
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.flags());
        out.push(self.dtype.code());
        out.push(self.group_count() as u8);
        out.extend_from_slice(&self.chunk_size.to_le_bytes());
        out.extend_from_slice(&self.total_size.to_le_bytes());
        out.extend_from_slice(&self.chunk_count.to_le_bytes());
        if let Some(d) = &self.base_digest {
            out.extend_from_slice(d);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(Error::InvalidHeader(format!(
                "need {FIXED_HEADER_LEN} header bytes, got {}",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let flags = bytes[5];
        if flags & FLAG_RESERVED != 0 {
            return Err(Error::InvalidHeader("reserved flag bits set".into()));
        }
        let backend = flags >> 4;
        if backend != crate::codec::lz::DEFAULT_BACKEND {
            return Err(Error::UnsupportedBackend(backend));
        }
        let dtype = DType::from_code(bytes[6])
            .ok_or_else(|| Error::InvalidHeader(format!("unknown dtype code {}", bytes[6])))?;
        if bytes[7] as usize != dtype.group_count() {
            return Err(Error::InvalidHeader(format!(
                "group count {} does not match dtype {dtype}",
                bytes[7]
            )));
        }
        let delta = flags & FLAG_DELTA != 0;
        let base_digest = if delta {
            let end = FIXED_HEADER_LEN + DIGEST_LEN;
            if bytes.len() < end {
                return Err(Error::InvalidHeader("delta header truncated".into()));
            }
            Some(bytes[FIXED_HEADER_LEN..end].try_into().unwrap())
        } else {
            None
        };
        let header = ContainerHeader {
            delta,
            safetensors: flags & FLAG_SAFETENSORS != 0,
            backend,
            dtype,
            chunk_size: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            total_size: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            chunk_count: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
            base_digest,
        };
        header.validate()?;
        Ok(header)
    }
}

pub fn encode_header(h: &ContainerHeader) -> Result<Vec<u8>> {
    h.encode()
}

pub fn decode_header(bytes: &[u8]) -> Result<ContainerHeader> {
    ContainerHeader::decode(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGroupRecord {
    pub method: Method,
    pub stored_len: u32,
}

impl ChunkGroupRecord {
    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let l = self.stored_len.to_le_bytes();
        [self.method.tag(), l[0], l[1], l[2], l[3]]
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        let method = Method::from_tag(b[0])
            .ok_or_else(|| Error::corrupt(format!("unknown method tag {}", b[0])))?;
        let stored_len = u32::from_le_bytes(b[1..5].try_into().unwrap());
        if method == Method::ZeroTruncated && stored_len != 0 {
            return Err(Error::corrupt("zero-truncated group with nonzero length"));
        }
        Ok(ChunkGroupRecord { method, stored_len })
    }

    /// Checks the record against the raw length of its group.
    pub fn check(&self, raw_len: usize) -> Result<()> {
        let ok = match self.method {
            Method::Stored => self.stored_len as usize == raw_len,
            Method::ZeroTruncated => self.stored_len == 0,
            Method::Huffman => (self.stored_len as usize) < raw_len,
            Method::LzEntropy => (self.stored_len as usize) < raw_len,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::corrupt(format!(
                "{} group of {raw_len} bytes cannot store {} bytes",
                self.method, self.stored_len
            )))
        }
    }
}

/// Prefix sums of `stored_len` in chunk-major, group-minor order.
pub fn compute_payload_offsets(table: &[Vec<ChunkGroupRecord>]) -> Result<Vec<Vec<u64>>> {
    let mut acc = 0u64;
    table
        .iter()
        .map(|row| {
            row.iter()
                .map(|r| {
                    let here = acc;
                    acc = acc.checked_add(r.stored_len as u64).ok_or(Error::Overflow)?;
                    Ok(here)
                })
                .collect()
        })
        .collect()
}

pub fn payload_len(table: &[Vec<ChunkGroupRecord>]) -> Result<u64> {
    table
        .iter()
        .flatten()
        .try_fold(0u64, |a, r| a.checked_add(r.stored_len as u64))
        .ok_or(Error::Overflow)
}

/// One contiguous, independently-typed region of the uncompressed stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub dtype: DType,
    pub offset: u64,
    pub len: u64,
    /// Groups of this segment are always stored verbatim.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stored: bool,
    #[serde(default)]
    pub first_chunk: u64,
    #[serde(default)]
    pub chunk_count: u64,
}

impl Segment {
    pub fn new(name: impl Into<String>, dtype: DType, offset: u64, len: u64) -> Self {
        Segment {
            name: name.into(),
            dtype,
            offset,
            len,
            stored: false,
            first_chunk: 0,
            chunk_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub segments: Vec<Segment>,
}

impl Manifest {
    /// Fills in chunk ranges and returns the total chunk count.
    pub fn assign_chunks(&mut self, chunk_size: u32) -> u64 {
        let mut next = 0;
        for s in &mut self.segments {
            s.first_chunk = next;
            s.chunk_count = s.len.div_ceil(chunk_size as u64);
            next += s.chunk_count;
        }
        next
    }

    fn validate(&self, header: &ContainerHeader) -> Result<()> {
        let mut pos = 0u64;
        let mut next_chunk = 0u64;
        for s in &self.segments {
            if s.offset != pos {
                return Err(Error::corrupt(format!("segment `{}` does not start at {pos}", s.name)));
            }
            if s.len % s.dtype.element_bytes() as u64 != 0 {
                return Err(Error::corrupt(format!("segment `{}` is misaligned", s.name)));
            }
            if s.first_chunk != next_chunk || s.chunk_count != s.len.div_ceil(header.chunk_size as u64) {
                return Err(Error::corrupt(format!("segment `{}` has a bad chunk range", s.name)));
            }
            pos = pos.checked_add(s.len).ok_or(Error::Overflow)?;
            next_chunk += s.chunk_count;
        }
        if pos != header.total_size {
            return Err(Error::corrupt("segments do not cover the whole input"));
        }
        if next_chunk != header.chunk_count {
            return Err(Error::InvalidHeader("chunk count does not match manifest".into()));
        }
        Ok(())
    }
}

/// Geometry of one chunk, derived from the header and manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkInfo {
    pub index: u64,
    pub segment: usize,
    pub raw_offset: u64,
    pub raw_len: usize,
    pub dtype: DType,
    pub stored: bool,
}

impl ChunkInfo {
    pub fn group_len(&self) -> usize {
        self.raw_len / self.dtype.element_bytes()
    }
}

pub fn chunk_layout(header: &ContainerHeader, manifest: Option<&Manifest>) -> Result<Vec<ChunkInfo>> {
    let single;
    let segments: &[Segment] = match manifest {
        Some(m) => &m.segments,
        None => {
            let mut s = Segment::new("", header.dtype, 0, header.total_size);
            s.chunk_count = header.chunk_count;
            single = [s];
            &single
        }
    };
    let cap = usize::try_from(header.chunk_count).map_err(|_| Error::Overflow)?;
    let mut out = Vec::with_capacity(cap);
    let cs = header.chunk_size as u64;
    for (si, s) in segments.iter().enumerate() {
        let mut off = 0u64;
        while off < s.len {
            let len = cs.min(s.len - off);
            out.push(ChunkInfo {
                index: out.len() as u64,
                segment: si,
                raw_offset: s.offset + off,
                raw_len: len as usize,
                dtype: s.dtype,
                stored: s.stored,
            });
            off += len;
        }
    }
    if out.len() as u64 != header.chunk_count {
        return Err(Error::InvalidHeader("chunk count does not match layout".into()));
    }
    Ok(out)
}

/// Header, optional manifest and chunk table: everything before the payload.
#[derive(Debug, Clone)]
pub struct Preamble {
    pub header: ContainerHeader,
    pub manifest: Option<Manifest>,
    pub layout: Vec<ChunkInfo>,
    pub table: Vec<Vec<ChunkGroupRecord>>,
    /// Byte length of the preamble, i.e. the payload's file offset.
    pub len: u64,
}

impl Preamble {
    pub fn payload_len(&self) -> Result<u64> {
        payload_len(&self.table)
    }

    pub fn offsets(&self) -> Result<Vec<Vec<u64>>> {
        compute_payload_offsets(&self.table)
    }
}

pub(crate) fn encode_manifest(manifest: &Manifest) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 4);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

/// Header bytes plus manifest bytes; the table follows immediately.
pub(crate) fn encode_head(header: &ContainerHeader, manifest: Option<&Manifest>) -> Result<Vec<u8>> {
    if header.safetensors != manifest.is_some() {
        return Err(Error::InvalidHeader(
            "a manifest is present exactly for safetensors-aware containers".into(),
        ));
    }
    let mut out = header.encode()?;
    if let Some(m) = manifest {
        m.validate(header)?;
        out.extend_from_slice(&encode_manifest(m)?);
    }
    Ok(out)
}

pub(crate) fn encode_table(table: &[Vec<ChunkGroupRecord>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(table.iter().map(Vec::len).sum::<usize>() * RECORD_LEN);
    for r in table.iter().flatten() {
        out.extend_from_slice(&r.encode());
    }
    out
}

pub(crate) fn table_len(layout: &[ChunkInfo]) -> u64 {
    layout.iter().map(|c| (c.dtype.group_count() * RECORD_LEN) as u64).sum()
}

pub fn read_preamble<R: Read>(mut r: R) -> Result<Preamble> {
    let mut fixed = [0u8; FIXED_HEADER_LEN + DIGEST_LEN];
    read_header_bytes(&mut r, &mut fixed[..FIXED_HEADER_LEN])?;
    // peek at the flags to learn whether a digest follows
    let mut head_len = FIXED_HEADER_LEN;
    if fixed[..4] == MAGIC && fixed[5] & FLAG_DELTA != 0 {
        read_header_bytes(&mut r, &mut fixed[FIXED_HEADER_LEN..])?;
        head_len += DIGEST_LEN;
    }
    let header = ContainerHeader::decode(&fixed[..head_len])?;
    let mut len = head_len as u64;

    let manifest = if header.safetensors {
        let mut n = [0u8; 4];
        read_header_bytes(&mut r, &mut n)?;
        let n = u32::from_le_bytes(n);
        if n > MAX_MANIFEST_LEN {
            return Err(Error::corrupt("manifest length is implausible"));
        }
        let mut json = vec![0u8; n as usize];
        read_header_bytes(&mut r, &mut json)?;
        let m: Manifest = serde_json::from_slice(&json)
            .map_err(|e| Error::corrupt(format!("manifest: {e}")))?;
        m.validate(&header)?;
        len += 4 + n as u64;
        Some(m)
    } else {
        None
    };

    let layout = chunk_layout(&header, manifest.as_ref())?;
    let tlen = table_len(&layout);
    let mut raw = vec![0u8; usize::try_from(tlen).map_err(|_| Error::Overflow)?];
    read_header_bytes(&mut r, &mut raw)?;
    let mut records = raw.chunks_exact(RECORD_LEN);
    let mut table = Vec::with_capacity(layout.len());
    for info in &layout {
        let row = (0..info.dtype.group_count())
            .map(|_| {
                let rec = ChunkGroupRecord::decode(records.next().unwrap())?;
                rec.check(info.group_len())?;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        table.push(row);
    }
    len += tlen;
    Ok(Preamble {
        header,
        manifest,
        layout,
        table,
        len,
    })
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::InvalidHeader("container truncated".into())
        } else {
            Error::Io(e)
        }
    })
}

/// A fully materialized container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub header: ContainerHeader,
    pub manifest: Option<Manifest>,
    pub table: Vec<Vec<ChunkGroupRecord>>,
    pub payload: Vec<u8>,
    pub checksum: u32,
}

impl Container {
    pub fn layout(&self) -> Result<Vec<ChunkInfo>> {
        chunk_layout(&self.header, self.manifest.as_ref())
    }

    pub fn offsets(&self) -> Result<Vec<Vec<u64>>> {
        compute_payload_offsets(&self.table)
    }

    pub fn encoded_len(&self) -> u64 {
        let manifest = self
            .manifest
            .as_ref()
            .map_or(0, |m| 4 + serde_json::to_vec(m).map_or(0, |j| j.len() as u64));
        self.header.encoded_len() as u64
            + manifest
            + (self.table.iter().map(Vec::len).sum::<usize>() * RECORD_LEN) as u64
            + self.payload.len() as u64
            + CHECKSUM_LEN as u64
    }

    pub fn compute_checksum(&self) -> u32 {
        crc32c::crc32c(&self.payload)
    }

    pub fn verify_checksum(&self) -> Result<()> {
        let computed = self.compute_checksum();
        if computed != self.checksum {
            return Err(Error::ChecksumMismatch {
                stored: self.checksum,
                computed,
            });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&encode_head(&self.header, self.manifest.as_ref())?)?;
        w.write_all(&encode_table(&self.table))?;
        w.write_all(&self.payload)?;
        w.write_all(&self.checksum.to_le_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Parses the structure. The checksum is read but not verified.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let pre = read_preamble(&mut cursor)?;
        let plen = pre.payload_len()?;
        let rest = &bytes[pre.len as usize..];
        if (rest.len() as u64) < plen + CHECKSUM_LEN as u64 {
            return Err(Error::corrupt("container truncated"));
        }
        if rest.len() as u64 > plen + CHECKSUM_LEN as u64 {
            return Err(Error::corrupt("trailing bytes after checksum"));
        }
        let plen = plen as usize;
        Ok(Container {
            header: pre.header,
            manifest: pre.manifest,
            table: pre.table,
            payload: rest[..plen].to_vec(),
            checksum: u32::from_le_bytes(rest[plen..].try_into().unwrap()),
        })
    }
}
