//! Chunked compression with exact byte accounting.
//!
//! Input is split into chunks of a [`ChunkSizeClass`] and every chunk is
//! compressed independently, so any subset of chunks decodes on its own.
//! Chunks that do not shrink are stored raw.
//!
//! Wire layout of one chunk (little-endian):
//!
//! ```text
//! u8 flag   low 7 bits codec id (0 stored-raw, 1 reference LZ); bit 7 wide lengths
//! u16 compressed length, u16 original length     (u32 each when wide)
//! payload
//! ```
//!
//! Wide lengths are only used when a length does not fit in 16 bits, i.e. for
//! the 64 KiB and 128 KiB classes.

pub mod lz;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CODEC_RAW: u8 = 0;
pub const CODEC_REFERENCE_LZ: u8 = 1;
const WIDE: u8 = 0x80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("chunk {chunk}: malformed data ({detail})")]
    Malformed { chunk: usize, detail: &'static str },
    #[error("chunk {chunk}: unknown codec id {id}")]
    UnknownCodec { chunk: usize, id: u8 },
    #[error("chunk {chunk}: decoded {got} bytes, expected {expected}")]
    Length { chunk: usize, got: usize, expected: usize },
    #[error("chunk wire data truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} is not a chunk size class (128B..128K, powers of two)")]
    BadChunkSize(String),
}

impl CodecError {
    fn at(self, chunk: usize) -> Self {
        match self {
            CodecError::Malformed { detail, .. } => CodecError::Malformed { chunk, detail },
            CodecError::UnknownCodec { id, .. } => CodecError::UnknownCodec { chunk, id },
            CodecError::Length { got, expected, .. } => CodecError::Length { chunk, got, expected },
            other => other,
        }
    }
}

/// Bytes compressed per codec invocation: a power of two from 128 B to
/// 128 KiB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ChunkSizeClass(u32);

impl ChunkSizeClass {
    pub const MIN: u32 = 128;
    pub const MAX: u32 = 131072;

    pub const B128: Self = Self(128);
    pub const B256: Self = Self(256);
    pub const B512: Self = Self(512);
    pub const K1: Self = Self(1024);
    pub const K2: Self = Self(2048);
    pub const K4: Self = Self(4096);
    pub const K8: Self = Self(8192);
    pub const K16: Self = Self(16384);
    pub const K32: Self = Self(32768);
    pub const K64: Self = Self(65536);
    pub const K128: Self = Self(131072);

    pub const ALL: [Self; 11] = [
        Self::B128,
        Self::B256,
        Self::B512,
        Self::K1,
        Self::K2,
        Self::K4,
        Self::K8,
        Self::K16,
        Self::K32,
        Self::K64,
        Self::K128,
    ];

    pub fn new(bytes: u32) -> Result<Self, CodecError> {
        if bytes.is_power_of_two() && (Self::MIN..=Self::MAX).contains(&bytes) {
            Ok(Self(bytes))
        } else {
            Err(CodecError::BadChunkSize(bytes.to_string()))
        }
    }

    pub fn bytes(self) -> usize {
        self.0 as usize
    }

    /// Whole pages covered by one chunk (at least 1).
    pub fn pages_per_chunk(self) -> usize {
        (self.0 as usize / crate::trace::PAGE_SIZE).max(1)
    }

    /// Chunks needed to cover `len` bytes.
    pub fn chunks_for(self, len: usize) -> usize {
        len.div_ceil(self.0 as usize)
    }
}

impl TryFrom<u32> for ChunkSizeClass {
    type Error = CodecError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ChunkSizeClass> for u32 {
    fn from(c: ChunkSizeClass) -> u32 {
        c.0
    }
}

impl fmt::Display for ChunkSizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= 1024 {
            write!(f, "{}K", self.0 / 1024)
        } else {
            write!(f, "{}B", self.0)
        }
    }
}

impl FromStr for ChunkSizeClass {
    type Err = CodecError;

    /// Accepts `128`, `128B`, `1K`, `1k`, `16KB`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::BadChunkSize(s.to_string());
        let t = s.trim();
        let upper = t.to_ascii_uppercase();
        let (digits, mult) = if let Some(d) = upper.strip_suffix("KB").or_else(|| upper.strip_suffix('K')) {
            (d, 1024u64)
        } else if let Some(d) = upper.strip_suffix('B') {
            (d, 1)
        } else {
            (upper.as_str(), 1)
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let v: u64 = digits.parse().map_err(|_| bad())?;
        let bytes = v.checked_mul(mult).filter(|b| *b <= u32::MAX as u64).ok_or_else(bad)?;
        Self::new(bytes as u32).map_err(|_| bad())
    }
}

/// A block compressor that can be plugged in under a codec id.
pub trait Codec: Send + Sync {
    fn id(&self) -> u8;
    fn name(&self) -> &'static str;
    fn compress_block(&self, input: &[u8], out: &mut Vec<u8>);
    fn decompress_block(&self, input: &[u8], original_len: usize, out: &mut Vec<u8>) -> Result<(), CodecError>;
}

/// The built-in greedy LZ77 codec (id 1).
#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceLz;

impl Codec for ReferenceLz {
    fn id(&self) -> u8 {
        CODEC_REFERENCE_LZ
    }
    fn name(&self) -> &'static str {
        "reference-lz"
    }
    fn compress_block(&self, input: &[u8], out: &mut Vec<u8>) {
        lz::compress_block(input, out)
    }
    fn decompress_block(&self, input: &[u8], original_len: usize, out: &mut Vec<u8>) -> Result<(), CodecError> {
        lz::decompress_block(input, original_len, out)
    }
}

/// Codecs available for decoding, keyed by id. Id 0 (stored-raw) is implicit.
#[derive(Clone)]
pub struct CodecRegistry {
    codecs: Vec<Arc<dyn Codec>>,
}

impl Default for CodecRegistry {
    fn default() -> Self {
        Self {
            codecs: vec![Arc::new(ReferenceLz)],
        }
    }
}

impl CodecRegistry {
    pub fn register(&mut self, codec: Arc<dyn Codec>) {
        assert_ne!(codec.id(), CODEC_RAW, "codec id 0 is reserved for stored-raw");
        self.codecs.retain(|c| c.id() != codec.id());
        self.codecs.push(codec);
    }

    pub fn get(&self, id: u8) -> Option<&dyn Codec> {
        self.codecs.iter().find(|c| c.id() == id).map(|c| c.as_ref())
    }
}

/// One independently decodable piece of compressed input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedChunk {
    /// Start of the covered span within the compressed input.
    pub offset: usize,
    pub original_len: usize,
    pub codec: u8,
    pub data: Vec<u8>,
}

impl CompressedChunk {
    pub fn stored_raw(&self) -> bool {
        self.codec == CODEC_RAW
    }

    fn wide(&self) -> bool {
        self.original_len > u16::MAX as usize || self.data.len() > u16::MAX as usize
    }

    pub fn header_len(&self) -> usize {
        if self.wide() {
            9
        } else {
            5
        }
    }

    /// Header plus payload bytes.
    pub fn wire_len(&self) -> usize {
        self.header_len() + self.data.len()
    }
}

/// Total stored bytes (headers included) of a chunk sequence.
pub fn compressed_size(chunks: &[CompressedChunk]) -> usize {
    chunks.iter().map(CompressedChunk::wire_len).sum()
}

/// Compresses `input` chunk by chunk with the reference codec.
pub fn compress(input: &[u8], chunk: ChunkSizeClass) -> Vec<CompressedChunk> {
    compress_with(&ReferenceLz, input, chunk)
}

pub fn compress_with(codec: &dyn Codec, input: &[u8], chunk: ChunkSizeClass) -> Vec<CompressedChunk> {
    let mut out = Vec::with_capacity(chunk.chunks_for(input.len()));
    let mut scratch = Vec::new();
    for (i, span) in input.chunks(chunk.bytes()).enumerate() {
        scratch.clear();
        codec.compress_block(span, &mut scratch);
        let (codec_id, data) = if scratch.len() < span.len() {
            (codec.id(), scratch.clone())
        } else {
            (CODEC_RAW, span.to_vec())
        };
        out.push(CompressedChunk {
            offset: i * chunk.bytes(),
            original_len: span.len(),
            codec: codec_id,
            data,
        });
    }
    out
}

/// Decodes a single chunk with the default registry.
pub fn decompress_chunk(chunk: &CompressedChunk) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(chunk.original_len);
    decode_into(&CodecRegistry::default(), chunk, &mut out)?;
    Ok(out)
}

fn decode_into(reg: &CodecRegistry, chunk: &CompressedChunk, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let start = out.len();
    if chunk.stored_raw() {
        out.extend_from_slice(&chunk.data);
    } else {
        let codec = reg.get(chunk.codec).ok_or(CodecError::UnknownCodec {
            chunk: 0,
            id: chunk.codec,
        })?;
        codec.decompress_block(&chunk.data, chunk.original_len, out)?;
    }
    let got = out.len() - start;
    if got != chunk.original_len {
        return Err(CodecError::Length {
            chunk: 0,
            got,
            expected: chunk.original_len,
        });
    }
    Ok(())
}

/// Decodes and concatenates `chunks` in order.
pub fn decompress(chunks: &[CompressedChunk]) -> Result<Vec<u8>, CodecError> {
    decompress_with(&CodecRegistry::default(), chunks)
}

pub fn decompress_with(reg: &CodecRegistry, chunks: &[CompressedChunk]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(chunks.iter().map(|c| c.original_len).sum());
    for (i, c) in chunks.iter().enumerate() {
        decode_into(reg, c, &mut out).map_err(|e| e.at(i))?;
    }
    Ok(out)
}

/// Serializes chunks in the wire layout.
pub fn encode_chunks(chunks: &[CompressedChunk], out: &mut Vec<u8>) {
    for c in chunks {
        if c.wide() {
            out.push(c.codec | WIDE);
            out.extend_from_slice(&(c.data.len() as u32).to_le_bytes());
            out.extend_from_slice(&(c.original_len as u32).to_le_bytes());
        } else {
            out.push(c.codec);
            out.extend_from_slice(&(c.data.len() as u16).to_le_bytes());
            out.extend_from_slice(&(c.original_len as u16).to_le_bytes());
        }
        out.extend_from_slice(&c.data);
    }
}

/// Parses a wire buffer back into chunks; offsets are cumulative.
pub fn decode_chunks(bytes: &[u8]) -> Result<Vec<CompressedChunk>, CodecError> {
    let mut out = Vec::new();
    let mut pos = 0;
    let mut offset = 0;
    while pos < bytes.len() {
        let flag = bytes[pos];
        let wide = flag & WIDE != 0;
        let hdr = if wide { 9 } else { 5 };
        let h = bytes.get(pos..pos + hdr).ok_or(CodecError::Truncated(pos))?;
        let (clen, olen) = if wide {
            (
                u32::from_le_bytes(h[1..5].try_into().unwrap()) as usize,
                u32::from_le_bytes(h[5..9].try_into().unwrap()) as usize,
            )
        } else {
            (
                u16::from_le_bytes([h[1], h[2]]) as usize,
                u16::from_le_bytes([h[3], h[4]]) as usize,
            )
        };
        pos += hdr;
        let data = bytes.get(pos..pos + clen).ok_or(CodecError::Truncated(pos))?;
        pos += clen;
        out.push(CompressedChunk {
            offset,
            original_len: olen,
            codec: flag & !WIDE,
            data: data.to_vec(),
        });
        offset += olen;
    }
    Ok(out)
}

/// Timing and ratio for one chunk size over one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSample {
    pub chunk: ChunkSizeClass,
    /// Median wall time of compressing the whole corpus.
    pub compress_ns_total: u64,
    /// Median wall time of decompressing the whole corpus.
    pub decompress_ns_total: u64,
    pub ratio: f64,
    pub original_bytes: u64,
    pub compressed_bytes: u64,
    pub chunks: u64,
}

impl CodecSample {
    pub fn compress_ns_per_op(&self) -> f64 {
        self.compress_ns_total as f64 / self.chunks.max(1) as f64
    }

    pub fn decompress_ns_per_op(&self) -> f64 {
        self.decompress_ns_total as f64 / self.chunks.max(1) as f64
    }
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Times the codec call only (chunk splitting and buffers are allocated
/// outside the timed region where possible).
pub fn measure_codec(corpus: &[u8], chunk: ChunkSizeClass, repetitions: usize) -> CodecSample {
    let reps = repetitions.max(1);
    let mut comp = Vec::with_capacity(reps);
    let mut decomp = Vec::with_capacity(reps);
    let mut last = Vec::new();
    for _ in 0..reps {
        let t = Instant::now();
        let chunks = compress(corpus, chunk);
        comp.push(t.elapsed().as_nanos() as u64);
        let t = Instant::now();
        let back = decompress(&chunks).expect("own output decodes");
        decomp.push(t.elapsed().as_nanos() as u64);
        debug_assert_eq!(back.len(), corpus.len());
        last = chunks;
    }
    let compressed = compressed_size(&last) as u64;
    CodecSample {
        chunk,
        compress_ns_total: median(comp),
        decompress_ns_total: median(decomp),
        ratio: corpus.len() as f64 / compressed.max(1) as f64,
        original_bytes: corpus.len() as u64,
        compressed_bytes: compressed,
        chunks: last.len() as u64,
    }
}
