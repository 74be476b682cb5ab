//! `znn`: compress, decompress and inspect neural-network weight files.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or corruption error, 3 I/O
//! error.

mod inspect;
mod sample;

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use znn::analysis::{exponent_histogram, model_report};
use znn::delta::{plan_bases, BaseMode};
use znn::pipeline::{compress_bytes, decompress_container, CompressConfig, ContainerReader};
use znn::safetensors::SafetensorsLayout;
use znn::{Container, DType, Error, InputFormat, SelectionMode};

use sample::Sample;

#[derive(Parser)]
#[command(name = "znn", version, about = "Lossless compression for neural-network weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EncodeOpts {
    /// Element type for raw input.
    #[arg(long, value_parser = parse_dtype)]
    dtype: Option<DType>,
    /// Treat the input as `auto`, `raw` or `safetensors`.
    #[arg(long, default_value = "auto", value_parser = parse_format)]
    format: InputFormat,
    /// Chunk size in KiB.
    #[arg(long, default_value_t = 256)]
    chunk_kb: u32,
    /// Method selection: model, auto, huffman, lz or stored.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SelectionMode>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a safetensors or raw weight file.
    Compress {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        opts: EncodeOpts,
    },
    /// Restore the original bytes from a container.
    Decompress {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Compress the XOR of TARGET against --base.
    Delta {
        #[arg(long)]
        base: PathBuf,
        target: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        opts: EncodeOpts,
    },
    /// Rebuild a target from --base and a delta container.
    Patch {
        #[arg(long)]
        base: PathBuf,
        delta: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Show header fields and per-group method counts of a container.
    Inspect {
        input: PathBuf,
        #[arg(long)]
        json: bool,
        /// Also verify the payload checksum.
        #[arg(long)]
        verify: bool,
    },
    /// Exponent histogram of a weight file.
    Hist {
        input: PathBuf,
        #[arg(long, value_parser = parse_dtype)]
        dtype: Option<DType>,
        #[arg(long, value_parser = Sample::parse)]
        sample: Option<Sample>,
        #[arg(long)]
        json: bool,
    },
    /// Per-tensor compressed sizes and byte-group breakdown.
    Report {
        input: PathBuf,
        #[arg(long, value_parser = Sample::parse)]
        sample: Option<Sample>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        opts: EncodeOpts,
    },
    /// Which checkpoints to store in full and which as deltas.
    Plan {
        #[arg(long)]
        checkpoints: usize,
        #[arg(long)]
        period: usize,
        /// chain or fixed
        #[arg(long, default_value = "chain", value_parser = parse_base_mode)]
        base_mode: BaseMode,
        #[arg(long)]
        json: bool,
    },
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<SelectionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_base_mode(s: &str) -> Result<BaseMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 3,
            Error::InvalidConfig(_) => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn is_dash(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn read_input(p: &Path) -> Result<Vec<u8>, Failure> {
    if is_dash(p) {
        let mut buf = Vec::new();
        io::stdin().lock().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        std::fs::read(p).map_err(|e| Failure {
            code: 3,
            msg: format!("{}: {e}", p.display()),
        })
    }
}

fn write_output(p: &Path, bytes: &[u8]) -> Outcome {
    if is_dash(p) {
        let mut out = io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
        return Ok(());
    }
    let dir = match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(p).map_err(|e| Failure::from(e.error))?;
    Ok(())
}

fn open(p: &Path) -> Result<File, Failure> {
    File::open(p).map_err(|e| Failure {
        code: 3,
        msg: format!("{}: {e}", p.display()),
    })
}

impl EncodeOpts {
    fn config(&self, default_mode: SelectionMode) -> Result<CompressConfig, Failure> {
        let chunk = self
            .chunk_kb
            .checked_mul(1024)
            .ok_or_else(|| Failure::usage("--chunk-kb is too large"))?;
        let cfg = CompressConfig::new(self.dtype.unwrap_or(DType::Opaque))
            .with_chunk_size(chunk)
            .with_mode(self.mode.unwrap_or(default_mode))
            .with_workers(self.threads);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves `auto` by sniffing the file; raw input needs a dtype.
    fn resolve_format(&self, path: &Path) -> Result<InputFormat, Failure> {
        let format = match self.format {
            InputFormat::Auto if is_dash(path) => InputFormat::Raw,
            InputFormat::Auto => {
                let mut f = open(path)?;
                let len = f.metadata()?.len();
                if SafetensorsLayout::read(BufReader::new(&mut f), len).is_ok() {
                    InputFormat::Safetensors
                } else {
                    InputFormat::Raw
                }
            }
            other => other,
        };
        if format == InputFormat::Raw && self.dtype.is_none() {
            return Err(Failure::usage("raw input needs --dtype {fp32,bf16,fp16,opaque}"));
        }
        if format == InputFormat::Safetensors && is_dash(path) {
            return Err(Failure::usage("stdin is only supported for raw input"));
        }
        Ok(format)
    }
}

fn print_size(raw: u64, compressed: u64, to_stderr: bool) {
    let pct = if raw == 0 { 0.0 } else { compressed as f64 / raw as f64 * 100.0 };
    let line = format!("compressed size: {pct:.1}% ({raw} -> {compressed} bytes)");
    if to_stderr {
        eprintln!("{line}");
    } else {
        println!("{line}");
    }
}

fn default_output(input: &Path, compressing: bool) -> Result<PathBuf, Failure> {
    if is_dash(input) {
        return Ok(PathBuf::from("-"));
    }
    if compressing {
        let mut s = input.as_os_str().to_owned();
        s.push(".znn");
        return Ok(PathBuf::from(s));
    }
    match input.extension() {
        Some(e) if e == "znn" => Ok(input.with_extension("")),
        _ => Err(Failure::usage("input does not end in .znn; pass -o")),
    }
}

fn compress(input: &Path, output: Option<PathBuf>, opts: &EncodeOpts) -> Outcome {
    let output = match output {
        Some(o) => o,
        None => default_output(input, true)?,
    };
    let format = opts.resolve_format(input)?;
    let cfg = opts.config(SelectionMode::Model)?;
    if format == InputFormat::Safetensors && is_dash(&output) {
        return Err(Failure::usage("stdout is only supported for raw input"));
    }
    if is_dash(input) || is_dash(&output) {
        let data = read_input(input)?;
        let bytes = compress_bytes(&data, &cfg)?.to_bytes()?;
        write_output(&output, &bytes)?;
        print_size(data.len() as u64, bytes.len() as u64, is_dash(&output));
        return Ok(());
    }
    let stats = znn::compress_file(input, &output, &cfg, format)?;
    print_size(stats.raw_bytes, stats.compressed_bytes, false);
    Ok(())
}

fn decompress(input: &Path, output: Option<PathBuf>, threads: usize) -> Outcome {
    let output = match output {
        Some(o) => o,
        None => default_output(input, false)?,
    };
    if is_dash(input) || is_dash(&output) {
        let container = Container::from_bytes(&read_input(input)?)?;
        let data = decompress_container(&container, threads)?;
        return write_output(&output, &data);
    }
    znn::decompress_file(input, &output, threads)?;
    Ok(())
}

fn delta(base: &Path, target: &Path, output: &Path, opts: &EncodeOpts) -> Outcome {
    if is_dash(base) || is_dash(target) || is_dash(output) {
        return Err(Failure::usage("delta works on files only"));
    }
    let format = opts.resolve_format(target)?;
    let cfg = opts.config(SelectionMode::DeltaAuto)?;
    let stats = znn::compress_delta_file(base, target, output, &cfg, format)?;
    print_size(stats.raw_bytes, stats.compressed_bytes, false);
    Ok(())
}

fn patch(base: &Path, delta: &Path, output: &Path, threads: usize) -> Outcome {
    if is_dash(base) || is_dash(delta) || is_dash(output) {
        return Err(Failure::usage("patch works on files only"));
    }
    znn::apply_delta_file(base, delta, output, threads)?;
    Ok(())
}

fn inspect_cmd(input: &Path, json: bool, verify: bool) -> Outcome {
    let mut reader = ContainerReader::open(BufReader::new(open(input)?))?;
    if verify {
        reader.verify_checksum()?;
    }
    let summary = inspect::Summary::new(&reader, verify);
    if json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    } else {
        print!("{summary}");
    }
    Ok(())
}

/// Float tensors of a file, each as (name, dtype, byte range in the file).
/// Raw files are one tensor of `dtype`.
fn tensors_of(path: &Path, data: &[u8], dtype: Option<DType>) -> Result<Vec<(String, DType, std::ops::Range<u64>)>, Failure> {
    match znn::safetensors::parse_safetensors(data) {
        Ok(layout) => {
            let start = layout.data_start();
            Ok(layout
                .tensors
                .iter()
                .filter(|t| !t.is_empty())
                .map(|t| {
                    (
                        t.name.clone(),
                        t.dtype(),
                        start + t.byte_range.start..start + t.byte_range.end,
                    )
                })
                .collect())
        }
        Err(_) => {
            let dtype = dtype.ok_or_else(|| {
                Failure::usage(format!("{} is not safetensors; pass --dtype", path.display()))
            })?;
            let w = dtype.element_bytes() as u64;
            let len = data.len() as u64 / w * w;
            Ok(vec![(path.display().to_string(), dtype, 0..len)])
        }
    }
}

/// Clips every tensor to the sampled byte window, keeping element alignment.
fn apply_sample(
    tensors: Vec<(String, DType, std::ops::Range<u64>)>,
    sample: Option<Sample>,
) -> Vec<(String, DType, std::ops::Range<u64>)> {
    let Some(sample) = sample else { return tensors };
    let lo = tensors.iter().map(|t| t.2.start).min().unwrap_or(0);
    let hi = tensors.iter().map(|t| t.2.end).max().unwrap_or(0);
    let window = sample.window(lo, hi);
    tensors
        .into_iter()
        .filter_map(|(name, dtype, r)| {
            let w = dtype.element_bytes() as u64;
            let start = r.start.max(window.start);
            let start = r.start + (start - r.start).div_ceil(w) * w;
            let end = r.end.min(window.end);
            (end > start).then(|| {
                let end = start + (end - start) / w * w;
                (name, dtype, start..end)
            })
        })
        .filter(|t| t.2.end > t.2.start)
        .collect()
}

fn hist(input: &Path, dtype: Option<DType>, sample: Option<Sample>, json: bool) -> Outcome {
    let data = read_input(input)?;
    let tensors = apply_sample(tensors_of(input, &data, dtype)?, sample);
    let mut counts = [0u64; 256];
    let mut used = Vec::new();
    for (name, dt, r) in &tensors {
        if !dt.is_float() || dtype.is_some_and(|d| d != *dt) {
            continue;
        }
        let h = exponent_histogram(&data[r.start as usize..r.end as usize], *dt)?;
        for (c, x) in counts.iter_mut().zip(h) {
            *c += x;
        }
        used.push(name.as_str());
    }
    if used.is_empty() {
        return Err(Error::OpaqueUnsupported.into());
    }
    let h = inspect::Histogram::new(&counts, used.len());
    if json {
        println!("{}", serde_json::to_string_pretty(&h).expect("histogram serializes"));
    } else {
        print!("{h}");
    }
    Ok(())
}

fn report(input: &Path, sample: Option<Sample>, json: bool, opts: &EncodeOpts) -> Outcome {
    let data = read_input(input)?;
    let tensors = apply_sample(tensors_of(input, &data, opts.dtype)?, sample);
    let slices: Vec<(String, DType, &[u8])> = tensors
        .into_iter()
        .map(|(n, d, r)| (n, d, &data[r.start as usize..r.end as usize]))
        .collect();
    let cfg = opts.config(SelectionMode::Model)?;
    let report = if opts.threads == 0 {
        model_report(&slices, &cfg)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Failure::usage(e.to_string()))?;
        pool.install(|| model_report(&slices, &cfg))?
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("{report}");
    }
    Ok(())
}

fn plan(checkpoints: usize, period: usize, mode: BaseMode, json: bool) -> Outcome {
    let schedule = plan_bases(checkpoints, period, mode).map_err(|e| Failure::usage(e.to_string()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&schedule).expect("schedule serializes"));
        return Ok(());
    }
    for e in &schedule.entries {
        match e.storage {
            znn::delta::Storage::Full => println!("{:>6}  full", e.checkpoint),
            znn::delta::Storage::Delta { base } => println!("{:>6}  delta from {base}", e.checkpoint),
        }
    }
    println!("longest recovery chain: {}", schedule.longest_chain());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Compress { input, output, opts } => compress(&input, output, &opts),
        Command::Decompress { input, output, threads } => decompress(&input, output, threads),
        Command::Delta { base, target, output, opts } => delta(&base, &target, &output, &opts),
        Command::Patch { base, delta, output, threads } => patch(&base, &delta, &output, threads),
        Command::Inspect { input, json, verify } => inspect_cmd(&input, json, verify),
        Command::Hist { input, dtype, sample, json } => hist(&input, dtype, sample, json),
        Command::Report { input, sample, json, opts } => report(&input, sample, json, &opts),
        Command::Plan { checkpoints, period, base_mode, json } => plan(checkpoints, period, base_mode, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("znn: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
