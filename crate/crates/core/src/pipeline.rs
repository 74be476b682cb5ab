//! Chunking, per-group method selection with the probe/skip heuristic, and
//! container assembly and disassembly.
//!
//! Compression works on batches of consecutive chunks. Within a batch the
//! chunks are regrouped and encoded in parallel; probe/skip decisions are
//! resolved in chunk order per byte-group stream, so the output is the same
//! for every worker count and batch size. Decompression uses the offset table
//! to decode the chunks of a batch independently.

use std::io::{Read, Seek, SeekFrom, Write};

use rayon::prelude::*;

use crate::codec::{decode_group_into, encode_group, select_method, GroupEncoding, Method, SelectionMode};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::format::{
    chunk_layout, encode_head, encode_table, payload_len, read_preamble, table_len, ChunkGroupRecord,
    ChunkInfo, Container, ContainerHeader, Manifest, Preamble, CHECKSUM_LEN, DEFAULT_CHUNK_SIZE,
};
use crate::regroup::{regroup, ungroup_into};

pub const DEFAULT_SKIP_WINDOW: u32 = 15;
pub const DEFAULT_INCOMPRESSIBLE_THRESHOLD: f64 = 0.98;

/// Chunks per batch for each worker. Bounds working memory to a few chunks
/// per thread.
const CHUNKS_PER_WORKER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressConfig {
    pub dtype: DType,
    pub chunk_size: u32,
    pub mode: SelectionMode,
    pub skip_window: u32,
    pub incompressible_threshold: f64,
    /// 0 uses every available core.
    pub worker_count: usize,
}

impl CompressConfig {
    pub fn new(dtype: DType) -> Self {
        CompressConfig {
            dtype,
            chunk_size: DEFAULT_CHUNK_SIZE,
            mode: SelectionMode::Model,
            skip_window: DEFAULT_SKIP_WINDOW,
            incompressible_threshold: DEFAULT_INCOMPRESSIBLE_THRESHOLD,
            worker_count: 0,
        }
    }

    pub fn with_mode(mut self, mode: SelectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_chunk_size(mut self, chunk_size: u32) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.worker_count = workers;
        self
    }

    pub fn with_skip_window(mut self, skip_window: u32) -> Self {
        self.skip_window = skip_window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.dtype.chunk_granularity();
        if self.chunk_size == 0 || !(self.chunk_size as usize).is_multiple_of(g) {
            return Err(Error::InvalidConfig(format!(
                "chunk size {} must be a positive multiple of {g}",
                self.chunk_size
            )));
        }
        if !(self.incompressible_threshold > 0.0 && self.incompressible_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "incompressible threshold {} must be in (0, 1]",
                self.incompressible_threshold
            )));
        }
        Ok(())
    }

    fn batch_chunks(&self) -> usize {
        let workers = if self.worker_count == 0 {
            rayon::current_num_threads()
        } else {
            self.worker_count
        };
        (workers * CHUNKS_PER_WORKER).max(CHUNKS_PER_WORKER)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeDecision {
    Probe,
    StoreRaw,
}

/// Skip counters for each byte-group stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupProbeState {
    remaining_skips: Vec<u32>,
    last_probe_incompressible: Vec<bool>,
    skip_window: u32,
}

impl GroupProbeState {
    pub fn new(group_count: usize, skip_window: u32) -> Self {
        GroupProbeState {
            remaining_skips: vec![0; group_count],
            last_probe_incompressible: vec![false; group_count],
            skip_window,
        }
    }

    /// Decision for the next chunk of `group`, without consuming it.
    pub fn peek(&self, group: usize) -> ProbeDecision {
        if self.remaining_skips[group] > 0 {
            ProbeDecision::StoreRaw
        } else {
            ProbeDecision::Probe
        }
    }

    pub fn probe_or_skip(&mut self, group: usize) -> ProbeDecision {
        let d = self.peek(group);
        if d == ProbeDecision::StoreRaw {
            self.remaining_skips[group] -= 1;
        }
        d
    }

    pub fn record_probe(&mut self, group: usize, incompressible: bool) {
        self.last_probe_incompressible[group] = incompressible;
        if incompressible {
            self.remaining_skips[group] = self.skip_window;
        }
    }

    pub fn remaining_skips(&self, group: usize) -> u32 {
        self.remaining_skips[group]
    }

    pub fn last_probe_incompressible(&self, group: usize) -> bool {
        self.last_probe_incompressible[group]
    }
}

/// The exponent stream of float dtypes is always probed.
fn always_probe(dtype: DType, group: usize) -> bool {
    dtype.is_float() && group == 0
}

/// Encodes one probed group. Encodings that save less than the threshold
/// allows are replaced by the raw bytes.
fn encode_probe(data: &[u8], cfg: &CompressConfig) -> Result<(GroupEncoding, bool)> {
    let method = select_method(data, cfg.mode)?;
    let enc = encode_group(data, method)?;
    let incompressible = enc.ratio() > cfg.incompressible_threshold;
    if incompressible && enc.method != Method::Stored {
        return Ok((GroupEncoding::stored(data), true));
    }
    Ok((enc, incompressible))
}

struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Ok(Workers(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map(|p| Workers(Some(p)))
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.0 {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }
}

/// A run of consecutive batch chunks belonging to one segment.
struct Run {
    segment: usize,
    end: usize,
    dtype: DType,
    verbatim: bool,
    state: GroupProbeState,
    cursor: Vec<usize>,
}

struct ChunkEncoder<'a> {
    cfg: &'a CompressConfig,
    carried: Option<(usize, GroupProbeState)>,
}

impl<'a> ChunkEncoder<'a> {
    fn new(cfg: &'a CompressConfig) -> Self {
        ChunkEncoder { cfg, carried: None }
    }

    /// Encodes a batch of consecutive chunks whose raw bytes are `data`.
    fn encode_batch(&mut self, chunks: &[ChunkInfo], data: &[u8]) -> Result<Vec<Vec<GroupEncoding>>> {
        let cfg = self.cfg;
        let base = chunks[0].raw_offset;
        let mut grouped: Vec<Vec<Vec<u8>>> = chunks
            .par_iter()
            .map(|c| {
                let start = (c.raw_offset - base) as usize;
                Ok(regroup(&data[start..start + c.raw_len], c.dtype)?.groups)
            })
            .collect::<Result<_>>()?;

        let mut runs: Vec<Run> = Vec::new();
        for (i, c) in chunks.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.segment == c.segment => r.end = i + 1,
                _ => {
                    let groups = c.dtype.group_count();
                    let state = match self.carried.take() {
                        Some((seg, st)) if seg == c.segment => st,
                        _ => GroupProbeState::new(groups, cfg.skip_window),
                    };
                    runs.push(Run {
                        segment: c.segment,
                        end: i + 1,
                        dtype: c.dtype,
                        verbatim: c.stored || cfg.mode == SelectionMode::ForceStored,
                        state,
                        cursor: vec![i; groups],
                    });
                }
            }
        }

        let mut probes: Vec<Vec<Option<(GroupEncoding, bool)>>> =
            grouped.iter().map(|g| vec![None; g.len()]).collect();
        let mut done: Vec<Vec<Option<GroupEncoding>>> =
            grouped.iter().map(|g| vec![None; g.len()]).collect();

        loop {
            // Predict the probes each stream will need, assuming unknown
            // probes behave like the stream's last one, and encode them all.
            let mut wanted = Vec::new();
            for run in runs.iter().filter(|r| !r.verbatim) {
                for (g, &cursor) in run.cursor.iter().enumerate() {
                    let mut sim = run.state.clone();
                    for (c, probe) in probes.iter().enumerate().take(run.end).skip(cursor) {
                        let probe_it = always_probe(run.dtype, g)
                            || sim.probe_or_skip(g) == ProbeDecision::Probe;
                        if !probe_it {
                            continue;
                        }
                        match &probe[g] {
                            Some((_, inc)) => sim.record_probe(g, *inc),
                            None => {
                                wanted.push((c, g));
                                let guess = sim.last_probe_incompressible(g);
                                sim.record_probe(g, guess);
                            }
                        }
                    }
                }
            }
            if !wanted.is_empty() {
                let encoded: Vec<Result<(GroupEncoding, bool)>> = wanted
                    .par_iter()
                    .map(|&(c, g)| encode_probe(&grouped[c][g], cfg))
                    .collect();
                for (&(c, g), r) in wanted.iter().zip(encoded) {
                    probes[c][g] = Some(r?);
                }
            }

            // Commit decisions in order until a probe result is missing.
            let mut finished = true;
            for run in &mut runs {
                for g in 0..run.cursor.len() {
                    while run.cursor[g] < run.end {
                        let c = run.cursor[g];
                        let raw = |grouped: &mut Vec<Vec<Vec<u8>>>| {
                            let payload = std::mem::take(&mut grouped[c][g]);
                            GroupEncoding {
                                method: Method::Stored,
                                raw_len: payload.len(),
                                payload,
                            }
                        };
                        if run.verbatim {
                            done[c][g] = Some(raw(&mut grouped));
                        } else if always_probe(run.dtype, g) {
                            let Some((enc, _)) = probes[c][g].take() else { break };
                            done[c][g] = Some(enc);
                        } else if run.state.peek(g) == ProbeDecision::StoreRaw {
                            run.state.probe_or_skip(g);
                            done[c][g] = Some(raw(&mut grouped));
                        } else {
                            let Some((enc, inc)) = probes[c][g].take() else { break };
                            run.state.probe_or_skip(g);
                            run.state.record_probe(g, inc);
                            done[c][g] = Some(enc);
                        }
                        run.cursor[g] += 1;
                    }
                    finished &= run.cursor[g] == run.end;
                }
            }
            if finished {
                break;
            }
        }

        if let Some(last) = runs.pop() {
            self.carried = Some((last.segment, last.state));
        }
        Ok(done
            .into_iter()
            .map(|row| row.into_iter().map(|e| e.expect("every group resolved")).collect())
            .collect())
    }
}

fn records(row: &[GroupEncoding]) -> Vec<ChunkGroupRecord> {
    row.iter()
        .map(|e| ChunkGroupRecord {
            method: e.method,
            stored_len: e.payload.len() as u32,
        })
        .collect()
}

fn check_aligned(len: u64, dtype: DType) -> Result<()> {
    let w = dtype.element_bytes();
    if !len.is_multiple_of(w as u64) {
        return Err(Error::MisalignedInput { len, element_bytes: w });
    }
    Ok(())
}

fn batch_span(batch: &[ChunkInfo]) -> (u64, usize) {
    let first = batch[0].raw_offset;
    let last = batch.last().unwrap();
    (first, (last.raw_offset + last.raw_len as u64 - first) as usize)
}

/// Compresses an in-memory buffer into a standalone container.
pub fn compress_bytes(input: &[u8], cfg: &CompressConfig) -> Result<Container> {
    cfg.validate()?;
    check_aligned(input.len() as u64, cfg.dtype)?;
    let header = ContainerHeader::new(cfg.dtype, cfg.chunk_size, input.len() as u64);
    compress_segments(input, header, None, cfg)
}

pub(crate) fn compress_segments(
    input: &[u8],
    header: ContainerHeader,
    manifest: Option<Manifest>,
    cfg: &CompressConfig,
) -> Result<Container> {
    if input.len() as u64 != header.total_size {
        return Err(Error::LengthMismatch {
            expected: header.total_size,
            actual: input.len() as u64,
        });
    }
    encode_head(&header, manifest.as_ref())?;
    let layout = chunk_layout(&header, manifest.as_ref())?;
    let workers = Workers::new(cfg.worker_count)?;
    let mut encoder = ChunkEncoder::new(cfg);
    let mut table = Vec::with_capacity(layout.len());
    let mut payload = Vec::new();
    for batch in layout.chunks(cfg.batch_chunks()) {
        let (start, len) = batch_span(batch);
        let data = &input[start as usize..start as usize + len];
        let rows = workers.run(|| encoder.encode_batch(batch, data))?;
        for row in rows {
            table.push(records(&row));
            for e in row {
                payload.extend_from_slice(&e.payload);
            }
        }
    }
    let checksum = crc32c::crc32c(&payload);
    Ok(Container {
        header,
        manifest,
        table,
        payload,
        checksum,
    })
}

fn decode_chunk_into(info: &ChunkInfo, row: &[ChunkGroupRecord], payload: &[u8], out: &mut [u8]) -> Result<()> {
    if row.len() != info.dtype.group_count() {
        return Err(Error::corrupt("chunk record count does not match its dtype"));
    }
    let n = info.group_len();
    if info.dtype.group_count() == 1 {
        return decode_group_into(row[0].method, payload, out);
    }
    let mut scratch = vec![0u8; info.raw_len];
    let mut pos = 0usize;
    for (rec, dst) in row.iter().zip(scratch.chunks_exact_mut(n)) {
        rec.check(n)?;
        let len = rec.stored_len as usize;
        let src = payload
            .get(pos..pos + len)
            .ok_or_else(|| Error::corrupt("group payload out of range"))?;
        decode_group_into(rec.method, src, dst)?;
        pos += len;
    }
    let groups: Vec<&[u8]> = scratch.chunks_exact(n).collect();
    ungroup_into(&groups, info.dtype, out);
    Ok(())
}

fn decode_batch(
    layout: &[ChunkInfo],
    table: &[Vec<ChunkGroupRecord>],
    payload: &[u8],
    out: &mut [u8],
) -> Result<()> {
    let mut jobs = Vec::with_capacity(layout.len());
    let mut prest = payload;
    let mut orest = out;
    for (info, row) in layout.iter().zip(table) {
        let plen = row.iter().map(|r| r.stored_len as usize).sum::<usize>();
        if plen > prest.len() {
            return Err(Error::corrupt("payload shorter than the chunk table"));
        }
        let (p, pr) = prest.split_at(plen);
        let (o, or) = std::mem::take(&mut orest).split_at_mut(info.raw_len);
        jobs.push((info, row, p, o));
        prest = pr;
        orest = or;
    }
    jobs.into_par_iter()
        .try_for_each(|(info, row, p, o)| decode_chunk_into(info, row, p, o))
}

/// Verifies the checksum and reconstructs the original bytes.
pub fn decompress_container(c: &Container, worker_count: usize) -> Result<Vec<u8>> {
    c.verify_checksum()?;
    let layout = c.layout()?;
    let plen = payload_len(&c.table)?;
    if plen != c.payload.len() as u64 {
        return Err(Error::LengthMismatch {
            expected: plen,
            actual: c.payload.len() as u64,
        });
    }
    let total = usize::try_from(c.header.total_size).map_err(|_| Error::Overflow)?;
    let mut out = vec![0u8; total];
    let workers = Workers::new(worker_count)?;
    workers.run(|| decode_batch(&layout, &c.table, &c.payload, &mut out))?;
    Ok(out)
}

/// Decodes a single chunk using only the header, table and that chunk's
/// payload bytes. Does not verify the container checksum.
pub fn decompress_chunk(c: &Container, index: usize) -> Result<Vec<u8>> {
    let layout = c.layout()?;
    let info = layout
        .get(index)
        .ok_or_else(|| Error::InvalidConfig(format!("chunk {index} out of range")))?;
    let offsets = c.offsets()?;
    let row = &c.table[index];
    let start = offsets[index].first().copied().unwrap_or(0) as usize;
    let len: usize = row.iter().map(|r| r.stored_len as usize).sum();
    let payload = c
        .payload
        .get(start..start + len)
        .ok_or_else(|| Error::corrupt("chunk payload out of range"))?;
    let mut out = vec![0u8; info.raw_len];
    decode_chunk_into(info, row, payload, &mut out)?;
    Ok(out)
}

/// Sizes reported by the streaming entry points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CompressStats {
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
}

impl CompressStats {
    /// Compressed size as a percentage of the input; lower is better.
    pub fn compressed_pct(&self) -> f64 {
        if self.raw_bytes == 0 {
            0.0
        } else {
            self.compressed_bytes as f64 / self.raw_bytes as f64 * 100.0
        }
    }
}

/// Compresses `total_size` bytes from `input` into `out`, holding at most one
/// batch of chunks in memory. The chunk table is patched in place once all
/// chunks are written, which is why `out` must be seekable.
pub fn compress_stream<R: Read, W: Write + Seek>(
    input: R,
    total_size: u64,
    cfg: &CompressConfig,
    out: W,
) -> Result<CompressStats> {
    cfg.validate()?;
    check_aligned(total_size, cfg.dtype)?;
    let header = ContainerHeader::new(cfg.dtype, cfg.chunk_size, total_size);
    compress_segments_stream(input, header, None, cfg, out)
}

pub(crate) fn compress_segments_stream<R: Read, W: Write + Seek>(
    mut input: R,
    header: ContainerHeader,
    manifest: Option<&Manifest>,
    cfg: &CompressConfig,
    mut out: W,
) -> Result<CompressStats> {
    let head = encode_head(&header, manifest)?;
    let layout = chunk_layout(&header, manifest)?;
    let start = out.stream_position()?;
    out.write_all(&head)?;
    let tlen = table_len(&layout);
    let zeros = vec![0u8; 64 * 1024];
    let mut left = tlen;
    while left > 0 {
        let n = left.min(zeros.len() as u64) as usize;
        out.write_all(&zeros[..n])?;
        left -= n as u64;
    }

    let workers = Workers::new(cfg.worker_count)?;
    let mut encoder = ChunkEncoder::new(cfg);
    let mut table = Vec::with_capacity(layout.len());
    let mut crc = 0u32;
    let mut payload_bytes = 0u64;
    let mut buf = Vec::new();
    for batch in layout.chunks(cfg.batch_chunks()) {
        let (_, len) = batch_span(batch);
        buf.resize(len, 0);
        input.read_exact(&mut buf)?;
        let rows = workers.run(|| encoder.encode_batch(batch, &buf))?;
        for row in rows {
            for e in &row {
                out.write_all(&e.payload)?;
                crc = crc32c::crc32c_append(crc, &e.payload);
                payload_bytes += e.payload.len() as u64;
            }
            table.push(records(&row));
        }
    }
    out.write_all(&crc.to_le_bytes())?;
    let end = out.stream_position()?;
    out.seek(SeekFrom::Start(start + head.len() as u64))?;
    out.write_all(&encode_table(&table))?;
    out.seek(SeekFrom::Start(end))?;
    out.flush()?;
    debug_assert_eq!(end - start, head.len() as u64 + tlen + payload_bytes + CHECKSUM_LEN as u64);
    Ok(CompressStats {
        raw_bytes: header.total_size,
        compressed_bytes: end - start,
    })
}

/// Random-access and streaming reader over an encoded container.
pub struct ContainerReader<R> {
    inner: R,
    preamble: Preamble,
    offsets: Vec<Vec<u64>>,
    payload_start: u64,
    payload_len: u64,
}

impl<R: Read + Seek> ContainerReader<R> {
    pub fn open(mut inner: R) -> Result<Self> {
        let start = inner.stream_position()?;
        let preamble = read_preamble(&mut inner)?;
        let offsets = preamble.offsets()?;
        let payload_len = preamble.payload_len()?;
        let payload_start = start + preamble.len;
        let end = inner.seek(SeekFrom::End(0))?;
        let expected = payload_start + payload_len + CHECKSUM_LEN as u64;
        if end < expected {
            return Err(Error::corrupt("container truncated"));
        }
        if end > expected {
            return Err(Error::corrupt("trailing bytes after checksum"));
        }
        Ok(ContainerReader {
            inner,
            preamble,
            offsets,
            payload_start,
            payload_len,
        })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.preamble.header
    }

    pub fn manifest(&self) -> Option<&Manifest> {
        self.preamble.manifest.as_ref()
    }

    pub fn layout(&self) -> &[ChunkInfo] {
        &self.preamble.layout
    }

    pub fn table(&self) -> &[Vec<ChunkGroupRecord>] {
        &self.preamble.table
    }

    /// Total encoded size of the container in bytes.
    pub fn encoded_len(&self) -> u64 {
        self.preamble.len + self.payload_len + CHECKSUM_LEN as u64
    }

    pub fn verify_checksum(&mut self) -> Result<()> {
        self.inner.seek(SeekFrom::Start(self.payload_start))?;
        let mut buf = vec![0u8; 1 << 20];
        let mut left = self.payload_len;
        let mut crc = 0u32;
        while left > 0 {
            let n = left.min(buf.len() as u64) as usize;
            self.inner.read_exact(&mut buf[..n])?;
            crc = crc32c::crc32c_append(crc, &buf[..n]);
            left -= n as u64;
        }
        let mut stored = [0u8; 4];
        self.inner.read_exact(&mut stored)?;
        let stored = u32::from_le_bytes(stored);
        if stored != crc {
            return Err(Error::ChecksumMismatch { stored, computed: crc });
        }
        Ok(())
    }

    /// Decodes one chunk by seeking straight to its payload.
    pub fn read_chunk(&mut self, index: usize) -> Result<Vec<u8>> {
        let info = *self
            .preamble
            .layout
            .get(index)
            .ok_or_else(|| Error::InvalidConfig(format!("chunk {index} out of range")))?;
        let row = &self.preamble.table[index];
        let start = self.offsets[index].first().copied().unwrap_or(0);
        let len: usize = row.iter().map(|r| r.stored_len as usize).sum();
        let mut payload = vec![0u8; len];
        self.inner.seek(SeekFrom::Start(self.payload_start + start))?;
        self.inner.read_exact(&mut payload)?;
        let mut out = vec![0u8; info.raw_len];
        decode_chunk_into(&info, row, &payload, &mut out)?;
        Ok(out)
    }

    pub fn decompress_to<W: Write>(&mut self, out: W, worker_count: usize) -> Result<u64> {
        self.decompress_with(out, worker_count, |_| Ok(()))
    }

    /// Verifies the checksum, then decodes batch by batch, passing each
    /// decoded run of bytes through `transform` before writing it.
    pub fn decompress_with<W, F>(&mut self, mut out: W, worker_count: usize, mut transform: F) -> Result<u64>
    where
        W: Write,
        F: FnMut(&mut [u8]) -> Result<()>,
    {
        self.verify_checksum()?;
        self.inner.seek(SeekFrom::Start(self.payload_start))?;
        let workers = Workers::new(worker_count)?;
        let per_batch = CompressConfig::new(DType::Opaque).with_workers(worker_count).batch_chunks();
        let mut written = 0u64;
        let mut payload = Vec::new();
        let mut raw = Vec::new();
        let layout = &self.preamble.layout;
        let table = &self.preamble.table;
        for (batch, rows) in layout.chunks(per_batch).zip(table.chunks(per_batch)) {
            let plen: usize = rows.iter().flatten().map(|r| r.stored_len as usize).sum();
            payload.resize(plen, 0);
            self.inner.read_exact(&mut payload)?;
            let (_, len) = batch_span(batch);
            raw.resize(len, 0);
            workers.run(|| decode_batch(batch, rows, &payload, &mut raw))?;
            transform(&mut raw)?;
            out.write_all(&raw)?;
            written += len as u64;
        }
        out.flush()?;
        Ok(written)
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}

/// Decodes a container from `input` into `out`.
pub fn decompress_stream<R: Read + Seek, W: Write>(input: R, out: W, worker_count: usize) -> Result<u64> {
    ContainerReader::open(input)?.decompress_to(out, worker_count)
}
