//! Diagnostics: exponent histograms, zero statistics, zero-order entropy and
//! per-tensor compressibility reports.

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::huffman::histogram;
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::pipeline::{compress_bytes, CompressConfig};

/// Counts of each exponent field value. FP16 exponents only reach 0..=31.
pub fn exponent_histogram(input: &[u8], dtype: DType) -> Result<[u64; 256]> {
    let width = dtype.element_bytes();
    if !dtype.is_float() {
        return Err(Error::OpaqueUnsupported);
    }
    if !input.len().is_multiple_of(width) {
        return Err(Error::MisalignedInput {
            len: input.len() as u64,
            element_bytes: width,
        });
    }
    let mut counts = [0u64; 256];
    match dtype {
        DType::Fp32 => {
            for e in input.chunks_exact(4) {
                let v = u32::from_le_bytes([e[0], e[1], e[2], e[3]]);
                counts[((v >> 23) & 0xFF) as usize] += 1;
            }
        }
        DType::Bf16 => {
            for e in input.chunks_exact(2) {
                let v = u16::from_le_bytes([e[0], e[1]]);
                counts[((v >> 7) & 0xFF) as usize] += 1;
            }
        }
        DType::Fp16 => {
            for e in input.chunks_exact(2) {
                let v = u16::from_le_bytes([e[0], e[1]]);
                counts[((v >> 10) & 0x1F) as usize] += 1;
            }
        }
        DType::Opaque => unreachable!(),
    }
    Ok(counts)
}

/// Fraction of zero bytes and the length of the longest zero run.
pub fn zero_stats(input: &[u8]) -> Result<(f64, usize)> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut zeros = 0usize;
    let mut run = 0usize;
    let mut longest = 0usize;
    for &b in input {
        if b == 0 {
            zeros += 1;
            run += 1;
        } else {
            longest = longest.max(run);
            run = 0;
        }
    }
    longest = longest.max(run);
    Ok((zeros as f64 / input.len() as f64, longest))
}

/// Zero-order empirical entropy in bits per byte.
pub fn entropy_bits_per_byte(input: &[u8]) -> Result<f64> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = input.len() as f64;
    Ok(histogram(input)
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Byte range of `len` bytes centred in a buffer of `total` bytes, with the
/// start rounded down to `align`.
pub fn sample_middle(total: u64, len: u64, align: u64) -> Range<u64> {
    if len >= total {
        return 0..total;
    }
    let align = align.max(1);
    let start = (total - len) / 2 / align * align;
    let len = len / align * align;
    start..start + len
}

/// One tensor's line in a [`ModelReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorReport {
    pub name: String,
    pub dtype: DType,
    pub raw_bytes: u64,
    pub compressed_pct: f64,
    pub groups_pct: Vec<f64>,
    #[serde(skip)]
    pub compressed_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub tensors: Vec<TensorReport>,
    pub total_pct: f64,
}

fn pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64 * 100.0
    }
}

/// Compresses each tensor as its own container and reports sizes as a
/// percentage of the raw bytes (lower is better).
pub fn model_report(tensors: &[(String, DType, &[u8])], cfg: &CompressConfig) -> Result<ModelReport> {
    let rows: Vec<TensorReport> = tensors
        .par_iter()
        .map(|(name, dtype, data)| {
            let mut tcfg = cfg.clone();
            tcfg.dtype = *dtype;
            tcfg.worker_count = 1;
            let container = compress_bytes(data, &tcfg)?;
            let groups = dtype.group_count();
            let mut group_payload = vec![0u64; groups];
            let mut group_raw = vec![0u64; groups];
            for (info, row) in container.layout()?.iter().zip(&container.table) {
                let n = (info.raw_len / dtype.element_bytes()) as u64;
                for (g, rec) in row.iter().enumerate() {
                    group_payload[g] += rec.stored_len as u64;
                    group_raw[g] += n;
                }
            }
            let compressed = container.encoded_len();
            Ok(TensorReport {
                name: name.clone(),
                dtype: *dtype,
                raw_bytes: data.len() as u64,
                compressed_pct: pct(compressed, data.len() as u64),
                groups_pct: group_payload
                    .iter()
                    .zip(&group_raw)
                    .map(|(&p, &r)| pct(p, r))
                    .collect(),
                compressed_bytes: compressed,
            })
        })
        .collect::<Result<_>>()?;
    let raw: u64 = rows.iter().map(|r| r.raw_bytes).sum();
    let compressed: u64 = rows.iter().map(|r| r.compressed_bytes).sum();
    Ok(ModelReport {
        total_pct: pct(compressed, raw),
        tensors: rows,
    })
}

impl fmt::Display for ModelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.tensors.iter().map(|t| t.name.len()).max().unwrap_or(0).max(6);
        writeln!(f, "{:<width$}  {:>6}  {:>14}  {:>10}  groups", "tensor", "dtype", "raw bytes", "size")?;
        for t in &self.tensors {
            let groups: Vec<String> = t.groups_pct.iter().map(|g| format!("{g:.1}%")).collect();
            writeln!(
                f,
                "{:<width$}  {:>6}  {:>14}  {:>9.1}%  ({})",
                t.name,
                t.dtype,
                t.raw_bytes,
                t.compressed_pct,
                groups.join(", ")
            )?;
        }
        write!(f, "total compressed size: {:.1}%", self.total_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_of_ones() {
        let data: Vec<u8> = std::iter::repeat_n(0x3F80u16.to_le_bytes(), 1000).flatten().collect();
        let h = exponent_histogram(&data, DType::Bf16).unwrap();
        assert_eq!(h[127], 1000);
        assert_eq!(h.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn histogram_of_zeros() {
        let h = exponent_histogram(&[0u8; 400], DType::Fp32).unwrap();
        assert_eq!(h[0], 100);
        let h = exponent_histogram(&[0u8; 400], DType::Fp16).unwrap();
        assert_eq!(h[0], 200);
    }

    #[test]
    fn fp16_exponents_stay_below_32() {
        let data: Vec<u8> = (0..=u16::MAX).flat_map(|v| v.to_le_bytes()).collect();
        let h = exponent_histogram(&data, DType::Fp16).unwrap();
        assert!(h[32..].iter().all(|&c| c == 0));
        assert_eq!(h[15], 2048);
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(exponent_histogram(&[0; 4], DType::Opaque), Err(Error::OpaqueUnsupported)));
        assert!(matches!(
            exponent_histogram(&[0; 3], DType::Bf16),
            Err(Error::MisalignedInput { .. })
        ));
    }

    #[test]
    fn zero_stats_examples() {
        assert_eq!(zero_stats(&[0; 10]).unwrap(), (1.0, 10));
        assert_eq!(zero_stats(&[1, 2, 3]).unwrap(), (0.0, 0));
        assert_eq!(zero_stats(&[0, 0, 5, 0]).unwrap(), (0.75, 2));
        assert!(matches!(zero_stats(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_bits_per_byte(&[9; 100]).unwrap(), 0.0);
        assert!((entropy_bits_per_byte(&[1, 2, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        let all: Vec<u8> = (0..=255).collect();
        assert!((entropy_bits_per_byte(&all).unwrap() - 8.0).abs() < 1e-12);
        assert!(entropy_bits_per_byte(&[]).is_err());
    }

    #[test]
    fn entropy_ignores_order() {
        let a: Vec<u8> = (0..1000u32).map(|i| (i * i % 37) as u8).collect();
        let mut b = a.clone();
        b.reverse();
        b.rotate_left(333);
        let (ha, hb) = (entropy_bits_per_byte(&a).unwrap(), entropy_bits_per_byte(&b).unwrap());
        assert!((ha - hb).abs() < 1e-12);
        assert!((0.0..=8.0).contains(&ha));
    }

    #[test]
    fn middle_sample() {
        assert_eq!(sample_middle(100, 200, 4), 0..100);
        assert_eq!(sample_middle(100, 20, 4), 40..60);
        assert_eq!(sample_middle(101, 20, 4), 40..60);
        assert_eq!(sample_middle(100, 22, 4), 36..56);
    }

    #[test]
    fn report_of_zero_and_random_tensors() {
        let zeros = vec![0u8; 1 << 20];
        let mut s = 1u64;
        let noise: Vec<u8> = (0..1 << 20)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                s as u8
            })
            .collect();
        let tensors = vec![
            ("zeros".to_string(), DType::Bf16, zeros.as_slice()),
            ("noise".to_string(), DType::Opaque, noise.as_slice()),
        ];
        let report = model_report(&tensors, &CompressConfig::new(DType::Opaque)).unwrap();
        let z = &report.tensors[0];
        assert!(z.compressed_pct < 0.05, "{}", z.compressed_pct);
        assert_eq!(z.groups_pct, vec![0.0, 0.0]);
        let r = &report.tensors[1];
        assert!(r.compressed_pct > 99.9 && r.compressed_pct < 100.1);
        assert_eq!(r.groups_pct, vec![100.0]);
        assert!((report.total_pct - 50.0).abs() < 0.1);

        let json = serde_json::to_value(&report).unwrap();
        assert!(json["tensors"][0]["groups_pct"].is_array());
        assert!(json["total_pct"].is_number());
        assert!(report.to_string().contains("total compressed size"));
    }
}
