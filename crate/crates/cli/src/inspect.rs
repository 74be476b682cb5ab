//! Human and JSON renderings for `inspect` and `hist`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Seek};

use serde::Serialize;
use znn::pipeline::ContainerReader;
use znn::Method;

#[derive(Serialize)]
pub struct GroupSummary {
    pub group: usize,
    pub methods: BTreeMap<&'static str, u64>,
    pub raw_bytes: u64,
    pub payload_bytes: u64,
    pub pct: f64,
}

#[derive(Serialize)]
pub struct Summary {
    pub version: u8,
    pub dtype: String,
    pub delta: bool,
    pub safetensors: bool,
    pub backend: u8,
    pub chunk_size: u32,
    pub total_size: u64,
    pub chunk_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    pub container_bytes: u64,
    pub total_pct: f64,
    pub groups: Vec<GroupSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checksum_ok: Option<bool>,
}

fn pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64 * 100.0
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Summary {
    pub fn new<R: Read + Seek>(r: &ContainerReader<R>, verified: bool) -> Self {
        let h = r.header();
        let mut groups: Vec<GroupSummary> = Vec::new();
        for (info, row) in r.layout().iter().zip(r.table()) {
            for (g, rec) in row.iter().enumerate() {
                if groups.len() <= g {
                    groups.push(GroupSummary {
                        group: g,
                        methods: Method::ALL.iter().map(|m| (m.name(), 0)).collect(),
                        raw_bytes: 0,
                        payload_bytes: 0,
                        pct: 0.0,
                    });
                }
                let s = &mut groups[g];
                *s.methods.get_mut(rec.method.name()).expect("all methods listed") += 1;
                s.raw_bytes += info.group_len() as u64;
                s.payload_bytes += rec.stored_len as u64;
            }
        }
        for g in &mut groups {
            g.pct = pct(g.payload_bytes, g.raw_bytes);
        }
        Summary {
            version: znn::format::VERSION,
            dtype: h.dtype.to_string(),
            delta: h.delta,
            safetensors: h.safetensors,
            backend: h.backend,
            chunk_size: h.chunk_size,
            total_size: h.total_size,
            chunk_count: h.chunk_count,
            base_digest: h.base_digest.map(|d| hex(&d)),
            segments: r.manifest().map(|m| m.segments.len()),
            container_bytes: r.encoded_len(),
            total_pct: pct(r.encoded_len(), h.total_size),
            groups,
            checksum_ok: verified.then_some(true),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version      {}", self.version)?;
        writeln!(f, "dtype        {}", self.dtype)?;
        writeln!(f, "delta        {}", self.delta)?;
        writeln!(f, "safetensors  {}", self.safetensors)?;
        writeln!(f, "chunk size   {}", self.chunk_size)?;
        writeln!(f, "total size   {}", self.total_size)?;
        writeln!(f, "chunks       {}", self.chunk_count)?;
        if let Some(d) = &self.base_digest {
            writeln!(f, "base sha256  {d}")?;
        }
        if let Some(n) = self.segments {
            writeln!(f, "segments     {n}")?;
        }
        if self.checksum_ok.is_some() {
            writeln!(f, "checksum     ok")?;
        }
        for g in &self.groups {
            let methods: Vec<String> = g
                .methods
                .iter()
                .filter(|(_, &n)| n > 0)
                .map(|(m, n)| format!("{m}={n}"))
                .collect();
            writeln!(f, "group {}      {:.1}%  {}", g.group, g.pct, methods.join(" "))?;
        }
        writeln!(f, "compressed size: {:.1}%", self.total_pct)
    }
}

#[derive(Serialize)]
pub struct Histogram {
    pub tensors: usize,
    pub elements: u64,
    pub nonzero_bins: usize,
    pub top12_mass: f64,
    /// (exponent, count) for every bin that occurs.
    pub bins: Vec<(u8, u64)>,
}

impl Histogram {
    pub fn new(counts: &[u64; 256], tensors: usize) -> Self {
        let elements: u64 = counts.iter().sum();
        let bins: Vec<(u8, u64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(e, &c)| (e as u8, c))
            .collect();
        let mut sorted: Vec<u64> = bins.iter().map(|b| b.1).collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let top: u64 = sorted.iter().take(12).sum();
        Histogram {
            tensors,
            elements,
            nonzero_bins: bins.len(),
            top12_mass: pct(top, elements),
            bins,
        }
    }
}

impl fmt::Display for Histogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (e, c) in &self.bins {
            writeln!(f, "{e:>4}  {c:>14}  {:>6.2}%", pct(*c, self.elements))?;
        }
        writeln!(
            f,
            "{} elements from {} tensors, {} exponent values, top 12 hold {:.2}%",
            self.elements, self.tensors, self.nonzero_bins, self.top12_mass
        )
    }
}
