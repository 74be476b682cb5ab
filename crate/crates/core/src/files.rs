//! File-to-file entry points. Outputs are written to a temporary file in the
//! destination directory and renamed into place once complete.

use std::fs::File;
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use crate::delta::{apply_delta_stream, sha256_reader, XorReader};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::format::{ContainerHeader, Manifest};
use crate::pipeline::{compress_segments_stream, decompress_stream, CompressConfig, CompressStats};
use crate::safetensors::SafetensorsLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// Safetensors if the file parses as one, otherwise raw.
    Auto,
    /// A flat array of the configured dtype.
    Raw,
    Safetensors,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(InputFormat::Auto),
            "raw" => Ok(InputFormat::Raw),
            "safetensors" => Ok(InputFormat::Safetensors),
            other => Err(Error::InvalidConfig(format!("unknown input format `{other}`"))),
        }
    }
}

/// Header and manifest for compressing a file of `len` bytes read from `f`.
pub fn plan_file(f: &mut File, len: u64, cfg: &CompressConfig, format: InputFormat) -> Result<(ContainerHeader, Option<Manifest>)> {
    cfg.validate()?;
    let layout = match format {
        InputFormat::Raw => None,
        InputFormat::Safetensors => Some(SafetensorsLayout::read(BufReader::new(&mut *f), len)?),
        InputFormat::Auto => SafetensorsLayout::read(BufReader::new(&mut *f), len).ok(),
    };
    f.seek(SeekFrom::Start(0))?;
    match layout {
        Some(layout) => {
            let granularity = 8 * DType::MAX_ELEMENT_BYTES as u32;
            if !cfg.chunk_size.is_multiple_of(granularity) {
                return Err(Error::InvalidConfig(format!(
                    "chunk size must be a multiple of {granularity} for safetensors input"
                )));
            }
            let mut manifest = layout.manifest(len);
            let mut header = ContainerHeader::new(DType::Opaque, cfg.chunk_size, len);
            header.safetensors = true;
            header.chunk_count = manifest.assign_chunks(cfg.chunk_size);
            Ok((header, Some(manifest)))
        }
        None => {
            let w = cfg.dtype.element_bytes();
            if !len.is_multiple_of(w as u64) {
                return Err(Error::MisalignedInput { len, element_bytes: w });
            }
            Ok((ContainerHeader::new(cfg.dtype, cfg.chunk_size, len), None))
        }
    }
}

fn write_atomic<T>(output: &Path, f: impl FnOnce(&mut BufWriter<&mut File>) -> Result<T>) -> Result<T> {
    let dir = match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    let value = {
        let mut w = BufWriter::new(tmp.as_file_mut());
        let v = f(&mut w)?;
        w.flush()?;
        v
    };
    tmp.as_file().sync_all()?;
    tmp.persist(output).map_err(|e| Error::Io(e.error))?;
    Ok(value)
}

pub fn compress_file(input: &Path, output: &Path, cfg: &CompressConfig, format: InputFormat) -> Result<CompressStats> {
    let mut f = File::open(input)?;
    let len = f.metadata()?.len();
    let (header, manifest) = plan_file(&mut f, len, cfg, format)?;
    write_atomic(output, |w| {
        compress_segments_stream(BufReader::new(&mut f), header, manifest.as_ref(), cfg, w)
    })
}

pub fn decompress_file(input: &Path, output: &Path, worker_count: usize) -> Result<u64> {
    let f = BufReader::new(File::open(input)?);
    write_atomic(output, |w| decompress_stream(f, w, worker_count))
}

/// Compresses `target XOR base`. The layout, if any, comes from the target.
pub fn compress_delta_file(
    base: &Path,
    target: &Path,
    output: &Path,
    cfg: &CompressConfig,
    format: InputFormat,
) -> Result<CompressStats> {
    let mut b = File::open(base)?;
    let mut t = File::open(target)?;
    let len = t.metadata()?.len();
    let blen = b.metadata()?.len();
    if blen != len {
        return Err(Error::LengthMismatch { expected: blen, actual: len });
    }
    let mut cfg = cfg.clone();
    if cfg.mode == crate::codec::SelectionMode::Model {
        cfg.mode = crate::codec::SelectionMode::DeltaAuto;
    }
    let (header, manifest) = plan_file(&mut t, len, &cfg, format)?;
    let digest = sha256_reader(BufReader::new(&mut b))?;
    b.seek(SeekFrom::Start(0))?;
    let header = header.with_base_digest(digest);
    write_atomic(output, |w| {
        let xored = XorReader {
            a: BufReader::new(&mut b),
            b: BufReader::new(&mut t),
        };
        compress_segments_stream(xored, header, manifest.as_ref(), &cfg, w)
    })
}

pub fn apply_delta_file(base: &Path, delta: &Path, output: &Path, worker_count: usize) -> Result<u64> {
    let b = BufReader::new(File::open(base)?);
    let d = BufReader::new(File::open(delta)?);
    write_atomic(output, |w| apply_delta_stream(b, d, w, worker_count))
}
