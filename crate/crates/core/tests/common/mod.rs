// Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const MB: usize = 1 << 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng(seed).fill_bytes(&mut v);
    v
}

/// f32 to bf16 with round-to-nearest-even.
pub fn f32_to_bf16(x: f32) -> u16 {
    let bits = x.to_bits();
    let round = 0x7FFF + ((bits >> 16) & 1);
    (bits.wrapping_add(round) >> 16) as u16
}

pub fn gaussian_f32(count: usize, sigma: f32, seed: u64) -> Vec<f32> {
    let normal = Normal::new(0.0f32, sigma).unwrap();
    let mut r = rng(seed);
    (0..count).map(|_| normal.sample(&mut r)).collect()
}

/// I.i.d. Gaussian weights (sigma 0.02) as little-endian BF16.
pub fn gaussian_bf16(bytes: usize, seed: u64) -> Vec<u8> {
    gaussian_f32(bytes / 2, 0.02, seed)
        .into_iter()
        .flat_map(|x| f32_to_bf16(x).to_le_bytes())
        .collect()
}

/// Gaussian FP32 weights with the two low fraction bytes zeroed.
pub fn clean_fp32(bytes: usize, seed: u64) -> Vec<u8> {
    gaussian_f32(bytes / 4, 0.02, seed)
        .into_iter()
        .flat_map(|x| (x.to_bits() & 0xFFFF_0000).to_le_bytes())
        .collect()
}

/// Replaces a `fraction` of the bytes with fresh random values.
pub fn perturb_bytes(base: &[u8], fraction: f64, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    base.iter()
        .map(|&b| if r.random_bool(fraction) { r.random() } else { b })
        .collect()
}

/// Nudges a `fraction` of the BF16 elements by a few units in the last place,
/// like a small optimizer step.
pub fn nudge_bf16(base: &[u8], fraction: f64, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    base.chunks_exact(2)
        .flat_map(|e| {
            let v = u16::from_le_bytes([e[0], e[1]]);
            let v = if r.random_bool(fraction) {
                v.wrapping_add_signed(r.random_range(-4i16..=4))
            } else {
                v
            };
            v.to_le_bytes()
        })
        .collect()
}

pub fn byte_counts(data: &[u8]) -> [u64; 256] {
    let mut c = [0u64; 256];
    for &b in data {
        c[b as usize] += 1;
    }
    c
}

/// Zero-order entropy in bits per symbol.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

pub fn entropy(data: &[u8]) -> f64 {
    entropy_of_counts(&byte_counts(data))
}

/// Exponent field of every BF16 element, read straight from the bits.
pub fn bf16_exponents(data: &[u8]) -> Vec<u8> {
    data.chunks_exact(2)
        .map(|e| ((u16::from_le_bytes([e[0], e[1]]) >> 7) & 0xFF) as u8)
        .collect()
}

pub fn pct(part: u64, whole: u64) -> f64 {
    part as f64 / whole as f64 * 100.0
}
