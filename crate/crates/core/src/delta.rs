//! XOR deltas between checkpoints of the same model, and base planning for
//! checkpoint series.

use std::io::{Read, Seek, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::SelectionMode;
use crate::error::{Error, Result};
use crate::format::{Container, ContainerHeader};
use crate::pipeline::{compress_segments, compress_segments_stream, CompressConfig, CompressStats, ContainerReader};

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// SHA-256 of everything `r` yields.
pub fn sha256_reader<R: Read>(mut r: R) -> Result<[u8; 32]> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().into())
}

pub fn xor_bytes(a: &[u8], b: &[u8]) -> Result<Vec<u8>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len() as u64,
            actual: b.len() as u64,
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x ^ y).collect())
}

/// `dst ^= src`, element by element.
pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn delta_config(cfg: &CompressConfig) -> CompressConfig {
    let mut cfg = cfg.clone();
    if cfg.mode == SelectionMode::Model {
        cfg.mode = SelectionMode::DeltaAuto;
    }
    cfg
}

/// Compresses `target XOR base`. The base's SHA-256 is recorded so the delta
/// can only be applied to the same base.
pub fn compress_delta(base: &[u8], target: &[u8], cfg: &CompressConfig) -> Result<Container> {
    let cfg = delta_config(cfg);
    cfg.validate()?;
    let x = xor_bytes(base, target)?;
    let w = cfg.dtype.element_bytes();
    if x.len() % w != 0 {
        return Err(Error::MisalignedInput {
            len: x.len() as u64,
            element_bytes: w,
        });
    }
    let header = ContainerHeader::new(cfg.dtype, cfg.chunk_size, x.len() as u64).with_base_digest(sha256(base));
    compress_segments(&x, header, None, &cfg)
}

fn check_base(header: &ContainerHeader, base_digest: [u8; 32], base_len: u64) -> Result<()> {
    let expected = header.base_digest.ok_or(Error::NotDelta)?;
    if expected != base_digest {
        return Err(Error::BaseDigestMismatch);
    }
    if base_len != header.total_size {
        return Err(Error::LengthMismatch {
            expected: header.total_size,
            actual: base_len,
        });
    }
    Ok(())
}

/// Reconstructs the target from a delta container and its base.
pub fn apply_delta(base: &[u8], delta: &Container, worker_count: usize) -> Result<Vec<u8>> {
    check_base(&delta.header, sha256(base), base.len() as u64)?;
    let mut out = crate::pipeline::decompress_container(delta, worker_count)?;
    xor_into(&mut out, base);
    Ok(out)
}

/// Streaming variant of [`compress_delta`]; both inputs are read once in
/// lockstep, but the base is hashed first, so it must be seekable.
pub fn compress_delta_stream<B, T, W>(mut base: B, target: T, total_size: u64, cfg: &CompressConfig, out: W) -> Result<CompressStats>
where
    B: Read + Seek,
    T: Read,
    W: Write + Seek,
{
    let cfg = delta_config(cfg);
    cfg.validate()?;
    let w = cfg.dtype.element_bytes() as u64;
    if !total_size.is_multiple_of(w) {
        return Err(Error::MisalignedInput {
            len: total_size,
            element_bytes: w as usize,
        });
    }
    let start = base.stream_position()?;
    let digest = sha256_reader(base.by_ref().take(total_size))?;
    base.seek(std::io::SeekFrom::Start(start))?;
    let header = ContainerHeader::new(cfg.dtype, cfg.chunk_size, total_size).with_base_digest(digest);
    let xored = XorReader { a: base, b: target };
    compress_segments_stream(xored, header, None, &cfg, out)
}

/// Streaming variant of [`apply_delta`]. The base is hashed before anything
/// is written.
pub fn apply_delta_stream<B, D, W>(mut base: B, delta: D, out: W, worker_count: usize) -> Result<u64>
where
    B: Read + Seek,
    D: Read + Seek,
    W: Write,
{
    let mut reader = ContainerReader::open(delta)?;
    let start = base.stream_position()?;
    let end = base.seek(std::io::SeekFrom::End(0))?;
    base.seek(std::io::SeekFrom::Start(start))?;
    let digest = sha256_reader(&mut base)?;
    check_base(reader.header(), digest, end - start)?;
    base.seek(std::io::SeekFrom::Start(start))?;
    let mut buf = Vec::new();
    reader.decompress_with(out, worker_count, |decoded| {
        buf.resize(decoded.len(), 0);
        base.read_exact(&mut buf)?;
        xor_into(decoded, &buf);
        Ok(())
    })
}

pub(crate) struct XorReader<A, B> {
    pub(crate) a: A,
    pub(crate) b: B,
}

impl<A: Read, B: Read> Read for XorReader<A, B> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.a.read(buf)?;
        if n == 0 {
            return Ok(0);
        }
        let mut other = vec![0u8; n];
        self.b.read_exact(&mut other)?;
        xor_into(&mut buf[..n], &other);
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMode {
    /// Each delta is against the previous checkpoint.
    Chain,
    /// Each delta is against the most recent full checkpoint.
    FixedBase,
}

impl std::str::FromStr for BaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(BaseMode::Chain),
            "fixed" | "fixed_base" => Ok(BaseMode::FixedBase),
            other => Err(Error::InvalidConfig(format!("unknown base mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Storage {
    Full,
    Delta { base: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub checkpoint: usize,
    pub storage: Storage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseSchedule {
    pub period: usize,
    pub mode: BaseMode,
    pub entries: Vec<ScheduleEntry>,
}

impl BaseSchedule {
    /// Checkpoints that must be decoded, oldest first, to rebuild `checkpoint`.
    pub fn recovery_chain(&self, checkpoint: usize) -> Result<Vec<usize>> {
        let mut chain = vec![checkpoint];
        let mut cur = checkpoint;
        loop {
            let e = self
                .entries
                .get(cur)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint {cur} not in schedule")))?;
            match e.storage {
                Storage::Full => break,
                Storage::Delta { base } if base < cur => {
                    chain.push(base);
                    cur = base;
                }
                Storage::Delta { .. } => {
                    return Err(Error::InvalidConfig(format!("checkpoint {cur} has a forward base")))
                }
            }
        }
        chain.reverse();
        Ok(chain)
    }

    /// Every delta points backwards and the first checkpoint is full.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.checkpoint != i {
                return Err(Error::InvalidConfig(format!("entry {i} names checkpoint {}", e.checkpoint)));
            }
            if let Storage::Delta { base } = e.storage {
                if base >= i {
                    return Err(Error::InvalidConfig(format!("checkpoint {i} has a forward base")));
                }
            }
        }
        match self.entries.first() {
            Some(e) if e.storage == Storage::Full => Ok(()),
            Some(_) => Err(Error::InvalidConfig("first checkpoint must be full".into())),
            None => Err(Error::NoCheckpoints),
        }
    }

    pub fn longest_chain(&self) -> usize {
        (0..self.entries.len())
            .map(|i| self.recovery_chain(i).map(|c| c.len()).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

/// Stores every `period`-th checkpoint in full and the rest as deltas.
pub fn plan_bases(n: usize, period: usize, mode: BaseMode) -> Result<BaseSchedule> {
    if period == 0 {
        return Err(Error::InvalidPeriod(period));
    }
    if n == 0 {
        return Err(Error::NoCheckpoints);
    }
    let entries = (0..n)
        .map(|i| ScheduleEntry {
            checkpoint: i,
            storage: if i % period == 0 {
                Storage::Full
            } else {
                Storage::Delta {
                    base: match mode {
                        BaseMode::Chain => i - 1,
                        BaseMode::FixedBase => i - i % period,
                    },
                }
            },
        })
        .collect();
    Ok(BaseSchedule { period, mode, entries })
}
