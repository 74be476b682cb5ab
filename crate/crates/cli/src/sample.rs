//! `--sample middle:N`: restrict analysis to N bytes from the middle of the
//! tensor data.

use std::ops::Range;

use znn::analysis::sample_middle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub bytes: u64,
}

impl Sample {
    /// Accepts `middle:N` where N takes an optional K, M or G suffix
    /// (powers of 1024). A bare number is in MiB.
    pub fn parse(s: &str) -> Result<Sample, String> {
        let n = s
            .strip_prefix("middle:")
            .ok_or_else(|| format!("expected middle:N, got `{s}`"))?;
        let (digits, scale) = match n.chars().last() {
            Some('K' | 'k') => (&n[..n.len() - 1], 1u64 << 10),
            Some('M' | 'm') => (&n[..n.len() - 1], 1 << 20),
            Some('G' | 'g') => (&n[..n.len() - 1], 1 << 30),
            _ => (n, 1 << 20),
        };
        let v: u64 = digits.parse().map_err(|_| format!("bad sample size `{n}`"))?;
        let bytes = v.checked_mul(scale).filter(|&b| b > 0).ok_or_else(|| format!("bad sample size `{n}`"))?;
        Ok(Sample { bytes })
    }

    /// The sampled window within `lo..hi`.
    pub fn window(&self, lo: u64, hi: u64) -> Range<u64> {
        let r = sample_middle(hi.saturating_sub(lo), self.bytes, 1);
        lo + r.start..lo + r.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sizes() {
        assert_eq!(Sample::parse("middle:1G").unwrap().bytes, 1 << 30);
        assert_eq!(Sample::parse("middle:64k").unwrap().bytes, 64 << 10);
        assert_eq!(Sample::parse("middle:3").unwrap().bytes, 3 << 20);
        assert!(Sample::parse("head:3").is_err());
        assert!(Sample::parse("middle:").is_err());
        assert!(Sample::parse("middle:0").is_err());
        assert!(Sample::parse("middle:xG").is_err());
    }

    #[test]
    fn window_is_centred() {
        let s = Sample { bytes: 10 };
        assert_eq!(s.window(100, 200), 145..155);
        assert_eq!(s.window(100, 105), 100..105);
    }
}
