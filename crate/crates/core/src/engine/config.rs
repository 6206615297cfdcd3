use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::ChunkSizeClass;
use crate::hotness::HotnessLevel;
use crate::trace::PAGE_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Zram,
    Ariadne,
}

impl FromStr for Scheme {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zram" | "baseline" => Ok(Scheme::Zram),
            "ariadne" => Ok(Scheme::Ariadne),
            _ => Err(ConfigError::Invalid(format!("unknown scheme {s:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Zram => "zram",
            Scheme::Ariadne => "ariadne",
        })
    }
}

/// Whether the hot list may be compressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Hot pages stay resident.
    Ehl,
    /// Every list is compressible.
    Al,
}

impl FromStr for Scenario {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ehl" => Ok(Scenario::Ehl),
            "al" => Ok(Scenario::Al),
            _ => Err(ConfigError::Invalid(format!("unknown scenario {s:?}"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Ehl => "ehl",
            Scenario::Al => "al",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid size string {input:?}: bad token {token:?}")]
    SizeToken { input: String, token: String },
    #[error("invalid size string {0:?}: expected small-medium-large")]
    SizeShape(String),
    #[error("invalid byte quantity {0:?}")]
    Bytes(String),
    #[error("{0}")]
    Invalid(String),
}

/// Chunk classes for hot, warm and cold data, written `1K-2K-16K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SizeTriple {
    pub small: ChunkSizeClass,
    pub medium: ChunkSizeClass,
    pub large: ChunkSizeClass,
}

impl SizeTriple {
    pub const fn new(small: ChunkSizeClass, medium: ChunkSizeClass, large: ChunkSizeClass) -> Self {
        Self { small, medium, large }
    }

    pub fn for_level(&self, level: HotnessLevel) -> ChunkSizeClass {
        match level {
            HotnessLevel::Hot => self.small,
            HotnessLevel::Warm => self.medium,
            HotnessLevel::Cold => self.large,
        }
    }

    /// Within the ranges evaluated for the scheme (small at most 1K, medium
    /// 2K or 4K, large 16K or 32K).
    pub fn is_reference_range(&self) -> bool {
        self.small.bytes() <= 1024
            && matches!(self.medium.bytes(), 2048 | 4096)
            && matches!(self.large.bytes(), 16384 | 32768)
    }
}

impl Default for SizeTriple {
    fn default() -> Self {
        Self::new(ChunkSizeClass::K1, ChunkSizeClass::K2, ChunkSizeClass::K16)
    }
}

impl fmt::Display for SizeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.small, self.medium, self.large)
    }
}

impl FromStr for SizeTriple {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(ConfigError::SizeShape(s.to_string()));
        }
        let mut out = [ChunkSizeClass::K4; 3];
        for (slot, tok) in out.iter_mut().zip(&parts) {
            *slot = tok.parse().map_err(|_| ConfigError::SizeToken {
                input: s.to_string(),
                token: tok.to_string(),
            })?;
        }
        Ok(Self::new(out[0], out[1], out[2]))
    }
}

impl TryFrom<String> for SizeTriple {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SizeTriple> for String {
    fn from(t: SizeTriple) -> String {
        t.to_string()
    }
}

/// Parses `256M`, `3G`, `4096`, `64K` (binary multiples).
pub fn parse_bytes(s: &str) -> Result<u64, ConfigError> {
    let t = s.trim();
    let bad = || ConfigError::Bytes(s.to_string());
    let upper = t.to_ascii_uppercase();
    let upper = upper.strip_suffix('B').unwrap_or(&upper);
    let (digits, mult) = match upper.chars().last() {
        Some('K') => (&upper[..upper.len() - 1], 1u64 << 10),
        Some('M') => (&upper[..upper.len() - 1], 1 << 20),
        Some('G') => (&upper[..upper.len() - 1], 1 << 30),
        _ => (upper, 1),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    digits
        .parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .ok_or_else(bad)
}

/// Everything that shapes one replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub scenario: Scenario,
    pub sizes: SizeTriple,
    /// Chunk class for every extent of the baseline scheme.
    pub baseline_chunk: ChunkSizeClass,
    pub mem_bytes: u64,
    pub zpool_bytes: u64,
    /// Flash swap capacity; `None` is unbounded.
    pub swap_bytes: Option<u64>,
    pub buffer_pages: usize,
    /// Reclaim starts when free memory drops below this.
    pub low_watermark_bytes: u64,
    /// Reclaim stops once free memory reaches this.
    pub high_watermark_bytes: u64,
    /// Hot-list admission limit for an app's first launch; `None` admits all.
    pub initial_hot_pages: Option<usize>,
}

impl SchemeConfig {
    /// Watermarks default to 1/128 and 1/64 of memory (at least one and two
    /// pages).
    pub fn new(scheme: Scheme, scenario: Scenario, sizes: SizeTriple, mem_bytes: u64, zpool_bytes: u64) -> Self {
        let page = PAGE_SIZE as u64;
        let low = (mem_bytes / 128 / page).max(1) * page;
        let high = (mem_bytes / 64 / page).max(2) * page;
        Self {
            scheme,
            scenario,
            sizes,
            baseline_chunk: ChunkSizeClass::K4,
            mem_bytes,
            zpool_bytes,
            swap_bytes: None,
            buffer_pages: if scheme == Scheme::Ariadne { 4 } else { 0 },
            low_watermark_bytes: low,
            high_watermark_bytes: high,
            initial_hot_pages: None,
        }
    }

    pub fn zram(mem_bytes: u64, zpool_bytes: u64) -> Self {
        Self::new(
            Scheme::Zram,
            Scenario::Al,
            SizeTriple::default(),
            mem_bytes,
            zpool_bytes,
        )
    }

    pub fn ariadne(scenario: Scenario, sizes: SizeTriple, mem_bytes: u64, zpool_bytes: u64) -> Self {
        Self::new(Scheme::Ariadne, scenario, sizes, mem_bytes, zpool_bytes)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let page = PAGE_SIZE as u64;
        if self.zpool_bytes % page != 0 {
            return Err(ConfigError::Invalid(format!(
                "zpool capacity {} is not a multiple of 4096",
                self.zpool_bytes
            )));
        }
        if self.high_watermark_bytes < self.low_watermark_bytes {
            return Err(ConfigError::Invalid("high watermark is below low watermark".into()));
        }
        let reserved = self.buffer_pages as u64 * page;
        if self.mem_bytes < reserved + self.high_watermark_bytes + page {
            return Err(ConfigError::Invalid(format!(
                "memory {} cannot hold the buffer and watermarks",
                self.mem_bytes
            )));
        }
        Ok(())
    }

    /// Chunk class for an extent of `level` pages under this scheme.
    pub fn chunk_for(&self, level: HotnessLevel) -> ChunkSizeClass {
        match self.scheme {
            Scheme::Zram => self.baseline_chunk,
            Scheme::Ariadne => self.sizes.for_level(level),
        }
    }

    /// Pages compressed together at `level`.
    pub fn pages_per_extent(&self, level: HotnessLevel) -> usize {
        match (self.scheme, level) {
            (Scheme::Ariadne, HotnessLevel::Cold) => self.sizes.large.pages_per_chunk(),
            _ => 1,
        }
    }

    pub fn compressible_levels(&self) -> &'static [HotnessLevel] {
        match (self.scheme, self.scenario) {
            (Scheme::Ariadne, Scenario::Ehl) => &[HotnessLevel::Cold, HotnessLevel::Warm],
            _ => &HotnessLevel::ALL,
        }
    }

    /// Short label such as `ariadne-al-1K-2K-16K` or `zram`.
    pub fn label(&self) -> String {
        match self.scheme {
            Scheme::Zram => "zram".into(),
            Scheme::Ariadne => format!("ariadne-{}-{}", self.scenario, self.sizes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_strings() {
        let t: SizeTriple = "1K-2K-16K".parse().unwrap();
        assert_eq!(
            (t.small.bytes(), t.medium.bytes(), t.large.bytes()),
            (1024, 2048, 16384)
        );
        assert_eq!(t.to_string(), "1K-2K-16K");
        assert_eq!("512B-4k-32K".parse::<SizeTriple>().unwrap().to_string(), "512B-4K-32K");
        assert_eq!(
            "512-4096-32768".parse::<SizeTriple>().unwrap().to_string(),
            "512B-4K-32K"
        );
        match "1K-3K-16K".parse::<SizeTriple>() {
            Err(ConfigError::SizeToken { token, .. }) => assert_eq!(token, "3K"),
            other => panic!("{other:?}"),
        }
        assert!(matches!("1K-2K".parse::<SizeTriple>(), Err(ConfigError::SizeShape(_))));
    }

    #[test]
    fn byte_quantities() {
        assert_eq!(parse_bytes("256M").unwrap(), 256 << 20);
        assert_eq!(parse_bytes("3G").unwrap(), 3 << 30);
        assert_eq!(parse_bytes("64KB").unwrap(), 64 << 10);
        assert_eq!(parse_bytes("4096").unwrap(), 4096);
        assert!(parse_bytes("12Q").is_err());
        assert!(parse_bytes("").is_err());
    }

    #[test]
    fn classes_per_level() {
        let c = SchemeConfig::ariadne(Scenario::Ehl, SizeTriple::default(), 1 << 20, 1 << 20);
        assert_eq!(c.chunk_for(HotnessLevel::Hot).bytes(), 1024);
        assert_eq!(c.chunk_for(HotnessLevel::Cold).bytes(), 16384);
        assert_eq!(c.pages_per_extent(HotnessLevel::Cold), 4);
        assert_eq!(c.pages_per_extent(HotnessLevel::Warm), 1);
        assert_eq!(c.compressible_levels(), &[HotnessLevel::Cold, HotnessLevel::Warm]);
        let z = SchemeConfig::zram(1 << 20, 1 << 20);
        assert_eq!(z.chunk_for(HotnessLevel::Cold).bytes(), 4096);
        assert_eq!(z.pages_per_extent(HotnessLevel::Cold), 1);
        assert_eq!(z.buffer_pages, 0);
        assert!(c.validate().is_ok());
        assert!(SizeTriple::default().is_reference_range());
    }
}
