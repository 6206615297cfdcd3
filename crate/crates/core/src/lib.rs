//! Trace-driven simulation of compressed swap.
//!
//! A trace of page touches and app launch boundaries is replayed against a
//! model of resident memory, a compressed pool (the zpool) and a flash swap
//! device. Two reclaim schemes are modeled: a single-list LRU baseline that
//! compresses every page with 4 KiB chunks, and a hotness-aware scheme that
//! keeps per-app hot/warm/cold lists, picks chunk sizes per list and
//! pre-decompresses the next zpool neighbour after a fault.
//!
//! ```no_run
//! use aswap::engine::{replay, Scenario, SchemeConfig};
//! use aswap::metrics::CostModel;
//! use aswap::trace::{generate, GeneratorSpec};
//!
//! let events = generate(&GeneratorSpec::default()).unwrap();
//! let cfg = SchemeConfig::ariadne(Scenario::Al, "1K-2K-16K".parse().unwrap(), 8 << 20, 8 << 20);
//! let out = replay(&events, cfg, CostModel::default(), false).unwrap();
//! println!("{}", out.report.totals.latency_ns);
//! ```

pub mod analysis;
pub mod cli;
pub mod compressor;
pub mod engine;
pub mod hotness;
pub mod metrics;
pub mod swapdev;
pub mod trace;
pub mod zpool;

use thiserror::Error;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error(transparent)]
    Codec(#[from] compressor::CodecError),
    #[error(transparent)]
    Hotness(#[from] hotness::HotnessError),
    #[error(transparent)]
    Zpool(#[from] zpool::ZpoolError),
    #[error(transparent)]
    Swap(#[from] swapdev::SwapError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Config(#[from] engine::ConfigError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {detail}")]
    Json { context: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
