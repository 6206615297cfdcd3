//! C ABI for the aswap simulator.
//!
//! Every fallible function returns an [`AswapStatus`]. On failure the message
//! is available from [`aswap_last_error`] on the same thread. Handles are
//! opaque and must be released with the matching `_free` function; strings
//! returned by the library are released with [`aswap_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use aswap::compressor::{self, ChunkSizeClass};
use aswap::engine::{Engine, EngineError, Scenario, Scheme, SchemeConfig, SizeTriple};
use aswap::metrics::CostModel;
use aswap::trace::{self, GeneratorSpec, TraceError, TraceEvent};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AswapStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Trace = 4,
    Config = 5,
    Engine = 6,
    Codec = 7,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AswapScheme {
    Zram = 0,
    Ariadne = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AswapScenario {
    Ehl = 0,
    Al = 1,
}

/// Replay configuration. Chunk sizes are in bytes; `swap_bytes == 0` means
/// an unbounded swap device.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AswapConfig {
    pub scheme: AswapScheme,
    pub scenario: AswapScenario,
    pub hot_chunk: u32,
    pub warm_chunk: u32,
    pub cold_chunk: u32,
    pub mem_bytes: u64,
    pub zpool_bytes: u64,
    pub swap_bytes: u64,
    pub buffer_pages: u32,
}

/// A decoded trace.
pub struct AswapTrace {
    events: Vec<TraceEvent>,
}

/// A replay engine together with the id of the last trace it ran.
pub struct AswapEngine {
    engine: Engine,
    trace_id: String,
}

struct Fail(AswapStatus, String);

impl From<TraceError> for Fail {
    fn from(e: TraceError) -> Self {
        let status = match e {
            TraceError::Io { .. } => AswapStatus::Io,
            _ => AswapStatus::Trace,
        };
        Fail(status, e.to_string())
    }
}

impl From<EngineError> for Fail {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::Config(_) => AswapStatus::Config,
            _ => AswapStatus::Engine,
        };
        Fail(status, e.to_string())
    }
}

impl From<compressor::CodecError> for Fail {
    fn from(e: compressor::CodecError) -> Self {
        Fail(AswapStatus::Codec, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AswapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AswapStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AswapStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AswapStatus::NullArgument, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AswapStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn chunk(bytes: u32) -> Result<ChunkSizeClass, Fail> {
    ChunkSizeClass::new(bytes).map_err(|e| Fail(AswapStatus::InvalidArgument, e.to_string()))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn aswap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library.
#[no_mangle]
pub unsafe extern "C" fn aswap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration for a scheme: 1K-2K-16K, 256 MiB memory, 96 MiB
/// zpool, unbounded swap.
#[no_mangle]
pub extern "C" fn aswap_config_default(scheme: AswapScheme) -> AswapConfig {
    let cfg = match scheme {
        AswapScheme::Zram => SchemeConfig::zram(256 << 20, 96 << 20),
        AswapScheme::Ariadne => SchemeConfig::ariadne(Scenario::Al, SizeTriple::default(), 256 << 20, 96 << 20),
    };
    AswapConfig {
        scheme,
        scenario: AswapScenario::Al,
        hot_chunk: cfg.sizes.small.bytes() as u32,
        warm_chunk: cfg.sizes.medium.bytes() as u32,
        cold_chunk: cfg.sizes.large.bytes() as u32,
        mem_bytes: cfg.mem_bytes,
        zpool_bytes: cfg.zpool_bytes,
        swap_bytes: 0,
        buffer_pages: cfg.buffer_pages as u32,
    }
}

/// Generates a trace from a JSON generator spec (missing fields take
/// defaults; `"{}"` is valid).
#[no_mangle]
pub unsafe extern "C" fn aswap_trace_generate(spec_json: *const c_char, out: *mut *mut AswapTrace) -> AswapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: GeneratorSpec = serde_json::from_str(c_str(spec_json, "spec_json")?)
            .map_err(|e| Fail(AswapStatus::InvalidArgument, format!("generator spec: {e}")))?;
        let events = trace::generate(&spec)?;
        *out = Box::into_raw(Box::new(AswapTrace { events }));
        Ok(())
    })
}

/// Reads a binary trace file.
#[no_mangle]
pub unsafe extern "C" fn aswap_trace_read(path: *const c_char, out: *mut *mut AswapTrace) -> AswapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let events = trace::read_trace_file(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(AswapTrace { events }));
        Ok(())
    })
}

/// Writes a trace in the binary format.
#[no_mangle]
pub unsafe extern "C" fn aswap_trace_write(t: *const AswapTrace, path: *const c_char) -> AswapStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("trace"))?;
        trace::write_trace_file(&t.events, Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Number of events, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn aswap_trace_len(t: *const AswapTrace) -> usize {
    t.as_ref().map_or(0, |t| t.events.len())
}

#[no_mangle]
pub unsafe extern "C" fn aswap_trace_free(t: *mut AswapTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Creates an engine. `cost_json` may be null for the default cost model.
#[no_mangle]
pub unsafe extern "C" fn aswap_engine_new(
    config: *const AswapConfig,
    cost_json: *const c_char,
    out: *mut *mut AswapEngine,
) -> AswapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let sizes = SizeTriple::new(chunk(c.hot_chunk)?, chunk(c.warm_chunk)?, chunk(c.cold_chunk)?);
        let scheme = match c.scheme {
            AswapScheme::Zram => Scheme::Zram,
            AswapScheme::Ariadne => Scheme::Ariadne,
        };
        let scenario = match c.scenario {
            AswapScenario::Ehl => Scenario::Ehl,
            AswapScenario::Al => Scenario::Al,
        };
        let mut cfg = SchemeConfig::new(scheme, scenario, sizes, c.mem_bytes, c.zpool_bytes);
        cfg.swap_bytes = (c.swap_bytes > 0).then_some(c.swap_bytes);
        cfg.buffer_pages = c.buffer_pages as usize;
        let cost = if cost_json.is_null() {
            CostModel::default()
        } else {
            serde_json::from_str(c_str(cost_json, "cost_json")?)
                .map_err(|e| Fail(AswapStatus::InvalidArgument, format!("cost model: {e}")))?
        };
        let engine = Engine::new(cfg, cost)?;
        *out = Box::into_raw(Box::new(AswapEngine {
            engine,
            trace_id: String::new(),
        }));
        Ok(())
    })
}

/// Replays every event of `t`. Running further traces continues from the
/// current state.
#[no_mangle]
pub unsafe extern "C" fn aswap_engine_run(e: *mut AswapEngine, t: *const AswapTrace) -> AswapStatus {
    guard(|| {
        let e = e.as_mut().ok_or_else(|| null("engine"))?;
        let t = t.as_ref().ok_or_else(|| null("trace"))?;
        e.engine.run(&t.events)?;
        e.trace_id = trace::trace_id(&t.events);
        Ok(())
    })
}

/// Checks page conservation; the violation is reported as the error message.
#[no_mangle]
pub unsafe extern "C" fn aswap_engine_check(e: *const AswapEngine) -> AswapStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("engine"))?;
        e.engine.check_conservation().map_err(|m| Fail(AswapStatus::Engine, m))
    })
}

/// Writes the report as a newly allocated JSON string.
#[no_mangle]
pub unsafe extern "C" fn aswap_engine_report_json(e: *const AswapEngine, out: *mut *mut c_char) -> AswapStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(e.engine.report(&e.trace_id).to_json());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aswap_engine_free(e: *mut AswapEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

unsafe fn emit(bytes: &[u8], out: *mut u8, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = bytes.len();
    if bytes.len() > cap {
        return Err(Fail(
            AswapStatus::BufferTooSmall,
            format!("need {} bytes, have {cap}", bytes.len()),
        ));
    }
    if !bytes.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    }
    Ok(())
}

/// Compresses `input` with chunks of `chunk_bytes` into a self-describing
/// byte stream. If `cap` is too small, the required size is written to
/// `out_len` and `BufferTooSmall` is returned.
#[no_mangle]
pub unsafe extern "C" fn aswap_compress(
    input: *const u8,
    len: usize,
    chunk_bytes: u32,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> AswapStatus {
    guard(|| {
        let data = slice(input, len, "input")?;
        let chunks = compressor::compress(data, chunk(chunk_bytes)?);
        let mut wire = Vec::new();
        compressor::encode_chunks(&chunks, &mut wire);
        emit(&wire, out, cap, out_len)
    })
}

/// Inverse of [`aswap_compress`].
#[no_mangle]
pub unsafe extern "C" fn aswap_decompress(
    input: *const u8,
    len: usize,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> AswapStatus {
    guard(|| {
        let chunks = compressor::decode_chunks(slice(input, len, "input")?)?;
        let data = compressor::decompress(&chunks)?;
        emit(&data, out, cap, out_len)
    })
}

/// Fraction of length-`n` windows of `stream` that are runs of consecutive
/// values.
#[no_mangle]
pub unsafe extern "C" fn aswap_locality(stream: *const u64, len: usize, n: usize, out: *mut f64) -> AswapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = slice(stream, len, "stream")?;
        *out = aswap::analysis::locality(s, n).map_err(|e| Fail(AswapStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}
