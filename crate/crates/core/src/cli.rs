//! The `aswap` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::analysis;
use crate::compressor::{ChunkSizeClass, CodecSample};
use crate::engine::{
    parse_bytes, replay, write_audit_jsonl, AuditRecord, Engine, Scenario, Scheme, SchemeConfig, SizeTriple,
};
use crate::metrics::{compare, CostModel, Report};
use crate::swapdev::SwapDevice;
use crate::trace::generate::corpus;
use crate::trace::{
    export_jsonl, generate, import_jsonl, read_trace_file, trace_id, write_trace_file, GeneratorSpec, PayloadModel,
    TraceEvent, TraceIndex,
};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "aswap", version, about = "Trace-driven compressed swap simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trace from a JSON generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace under one scheme configuration (or a matrix of them).
    Replay(Box<ReplayArgs>),
    /// Workload statistics.
    Analyze {
        #[arg(value_enum)]
        what: Analysis,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Window lengths for locality.
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        n: Vec<usize>,
        /// CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Codec timing and ratio across chunk sizes.
    SweepChunks {
        /// Corpus file; omit to synthesize one.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "templated")]
        synthetic: Synthetic,
        #[arg(long, default_value = "8M")]
        bytes: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `128B..128K` (doublings) or a comma list.
        #[arg(long, default_value = "128B..128K")]
        sizes: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit codec cost constants on this host.
    Calibrate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "4M")]
        bytes: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Compare two reports (baseline first).
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        /// CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a binary trace to JSON lines.
    ExportJsonl {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert JSON lines to a binary trace.
    ImportJsonl {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Analysis {
    Similarity,
    Deciles,
    Locality,
    Coverage,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Synthetic {
    Templated,
    Random,
    ZeroRuns,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// JSON file with any replay settings; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    sizes: Option<SizeTriple>,
    #[arg(long)]
    mem: Option<String>,
    #[arg(long)]
    zpool: Option<String>,
    /// Flash swap capacity (unbounded when absent).
    #[arg(long)]
    swap: Option<String>,
    /// Pre-decompression buffer pages.
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    baseline_chunk: Option<ChunkSizeClass>,
    #[arg(long)]
    low_watermark: Option<String>,
    #[arg(long)]
    high_watermark: Option<String>,
    #[arg(long)]
    initial_hot_pages: Option<usize>,
    /// Cost model JSON (as written by `calibrate`).
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Back the swap device with a log file.
    #[arg(long)]
    swap_file: Option<PathBuf>,
    /// JSON array of settings objects; each runs on top of the other settings.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    audit: Option<PathBuf>,
}

/// A quantity given as a number of bytes or a string such as `256M`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Qty {
    Bytes(u64),
    Text(String),
}

impl Qty {
    fn bytes(&self) -> Result<u64, Error> {
        match self {
            Qty::Bytes(b) => Ok(*b),
            Qty::Text(s) => Ok(parse_bytes(s)?),
        }
    }
}

/// Replay settings as read from a config file or matrix entry.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    scheme: Option<Scheme>,
    scenario: Option<Scenario>,
    sizes: Option<String>,
    mem: Option<Qty>,
    zpool: Option<Qty>,
    swap: Option<Qty>,
    buffer: Option<usize>,
    baseline_chunk: Option<ChunkSizeClass>,
    low_watermark: Option<Qty>,
    high_watermark: Option<Qty>,
    initial_hot_pages: Option<usize>,
    cost_model: Option<CostModel>,
}

impl Settings {
    /// Fields set in `top` replace those in `self`.
    fn overlay(mut self, top: &Settings) -> Settings {
        macro_rules! take {
            ($($f:ident),*) => {$(if top.$f.is_some() { self.$f = top.$f.clone(); })*};
        }
        take!(
            scheme,
            scenario,
            sizes,
            mem,
            zpool,
            swap,
            buffer,
            baseline_chunk,
            low_watermark,
            high_watermark,
            initial_hot_pages,
            cost_model
        );
        self
    }

    fn from_flags(a: &ReplayArgs) -> Settings {
        Settings {
            scheme: a.scheme,
            scenario: a.scenario,
            sizes: a.sizes.map(|s| s.to_string()),
            mem: a.mem.clone().map(Qty::Text),
            zpool: a.zpool.clone().map(Qty::Text),
            swap: a.swap.clone().map(Qty::Text),
            buffer: a.buffer,
            baseline_chunk: a.baseline_chunk,
            low_watermark: a.low_watermark.clone().map(Qty::Text),
            high_watermark: a.high_watermark.clone().map(Qty::Text),
            initial_hot_pages: a.initial_hot_pages,
            cost_model: None,
        }
    }

    fn resolve(&self) -> Result<(SchemeConfig, CostModel), Error> {
        let scheme = self.scheme.unwrap_or(Scheme::Zram);
        let sizes = match &self.sizes {
            Some(s) => s.parse()?,
            None => SizeTriple::default(),
        };
        let mem = self.mem.as_ref().map(Qty::bytes).transpose()?.unwrap_or(256 << 20);
        let zpool = self.zpool.as_ref().map(Qty::bytes).transpose()?.unwrap_or(96 << 20);
        let mut cfg = SchemeConfig::new(scheme, self.scenario.unwrap_or(Scenario::Al), sizes, mem, zpool);
        cfg.swap_bytes = self.swap.as_ref().map(Qty::bytes).transpose()?;
        if let Some(b) = self.buffer {
            cfg.buffer_pages = b;
        }
        if let Some(c) = self.baseline_chunk {
            cfg.baseline_chunk = c;
        }
        if let Some(q) = &self.low_watermark {
            cfg.low_watermark_bytes = q.bytes()?;
        }
        if let Some(q) = &self.high_watermark {
            cfg.high_watermark_bytes = q.bytes()?;
        }
        cfg.initial_hot_pages = self.initial_hot_pages;
        cfg.validate()?;
        let cost = self.cost_model.unwrap_or_default();
        cost.validate()?;
        Ok((cfg, cost))
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

macro_rules! data_from {
    ($($t:ty),*) => {$(impl From<$t> for Failure {
        fn from(e: $t) -> Self {
            Failure::Data(e.into())
        }
    })*};
}

data_from!(
    crate::trace::TraceError,
    crate::engine::EngineError,
    crate::engine::ConfigError,
    crate::metrics::MetricsError,
    crate::analysis::AnalysisError,
    crate::swapdev::SwapError,
    crate::compressor::CodecError
);

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let f = File::open(path).map_err(io(path.display().to_string()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Json {
        context: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(io(path.display().to_string()))
}

fn write_audit(path: &Path, audit: &[AuditRecord]) -> Result<(), Error> {
    let f = File::create(path).map_err(io(path.display().to_string()))?;
    write_audit_jsonl(audit, BufWriter::new(f)).map_err(io(path.display().to_string()))
}

fn read_audit(path: &Path) -> Result<Vec<AuditRecord>, Failure> {
    let f = File::open(path).map_err(io(path.display().to_string()))?;
    crate::engine::read_audit_jsonl(BufReader::new(f)).map_err(|detail| {
        Failure::Data(Error::Json {
            context: path.display().to_string(),
            detail,
        })
    })
}

/// Parses `128B..128K` as the doublings in between, or a comma list.
fn parse_size_list(s: &str) -> Result<Vec<ChunkSizeClass>, Failure> {
    let bad = |t: &str| Failure::Usage(format!("invalid chunk size {t:?} in {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let lo: ChunkSizeClass = a.parse().map_err(|_| bad(a))?;
        let hi: ChunkSizeClass = b.parse().map_err(|_| bad(b))?;
        let out: Vec<ChunkSizeClass> = ChunkSizeClass::ALL
            .iter()
            .copied()
            .filter(|c| c.bytes() >= lo.bytes() && c.bytes() <= hi.bytes())
            .collect();
        if out.is_empty() {
            return Err(Failure::Usage(format!("empty size range {s:?}")));
        }
        return Ok(out);
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad(t))).collect()
}

fn summary_line(r: &Report, label: &str) -> String {
    let t = &r.totals;
    format!(
        "{label:<28} {:>6} {:>14.0} {:>14.0} {:>7} {:>12} {:>6.3}",
        t.relaunches,
        t.latency_ns,
        t.cpu.total_ns,
        t.compression_ratio
            .map(|x| format!("{x:.3}"))
            .unwrap_or_else(|| "-".into()),
        t.flash_write_bytes,
        t.compressed_fraction_peak
    )
}

fn summary_header() -> String {
    format!(
        "{:<28} {:>6} {:>14} {:>14} {:>7} {:>12} {:>6}",
        "config", "launch", "latency_ns", "cpu_ns", "ratio", "flash_write", "peak"
    )
}

fn run_replay(a: &ReplayArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let file: Settings = match &a.config {
        Some(p) => read_json(p)?,
        None => Settings::default(),
    };
    let mut flags = Settings::from_flags(a);
    if let Some(p) = &a.cost {
        flags.cost_model = Some(read_json(p)?);
    }
    let base = file.overlay(&flags);
    let events = read_trace_file(&a.trace)?;
    let id = trace_id(&events);

    if let Some(m) = &a.matrix {
        if a.audit.is_some() || a.swap_file.is_some() {
            return Err(Failure::Usage(
                "--matrix cannot be combined with --audit or --swap-file".into(),
            ));
        }
        let entries: Vec<Settings> = read_json(m)?;
        let configs = entries
            .iter()
            .map(|e| base.clone().overlay(e).resolve())
            .collect::<Result<Vec<_>, _>>()?;
        let reports = configs
            .par_iter()
            .map(|(cfg, cost)| replay(&events, cfg.clone(), *cost, false).map(|r| r.report))
            .collect::<Result<Vec<_>, _>>()?;
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
        write_file(&a.out, json.as_bytes())?;
        let _ = writeln!(stdout, "{}", summary_header());
        for ((cfg, _), r) in configs.iter().zip(&reports) {
            let _ = writeln!(stdout, "{}", summary_line(r, &cfg.label()));
        }
        return Ok(());
    }

    let (cfg, cost) = base.resolve()?;
    let label = cfg.label();
    let swap = match &a.swap_file {
        Some(p) => SwapDevice::create(p, cfg.swap_bytes)?,
        None => SwapDevice::in_memory(cfg.swap_bytes),
    };
    let mut engine = Engine::with_swap(cfg, cost, swap)?.with_audit(a.audit.is_some());
    engine.run(&events)?;
    let report = engine.report(&id);
    write_file(&a.out, report.to_json().as_bytes())?;
    if let Some(p) = &a.audit {
        write_audit(p, engine.audit())?;
    }
    let _ = writeln!(stdout, "{}", summary_header());
    let _ = writeln!(stdout, "{}", summary_line(&report, &label));
    Ok(())
}

fn load_trace(path: &Path) -> Result<Vec<TraceEvent>, Failure> {
    Ok(read_trace_file(path)?)
}

fn run_analyze(
    what: Analysis,
    trace: &Path,
    audit: Option<&Path>,
    ns: &[usize],
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    let events = load_trace(trace)?;
    let index = TraceIndex::build(&events);
    let need_audit = || audit.ok_or_else(|| Failure::Usage("this analysis needs --audit".into()));
    let csv = match what {
        Analysis::Similarity => {
            let rows = analysis::similarity_all(&index)?;
            let (s, r) = analysis::mean_pair(&rows);
            let _ = writeln!(stdout, "pairs {}  similarity {s:.4}  reuse {r:.4}", rows.len());
            analysis::similarity_csv(&rows)
        }
        Analysis::Deciles => {
            let log = read_audit(need_audit()?)?;
            let rows = analysis::eviction_deciles(&log, &index)?;
            let _ = writeln!(
                stdout,
                "{:>4} {:>7} {:>7} {:>7} {:>8}",
                "part", "hot", "warm", "cold", "count"
            );
            for d in &rows {
                let _ = writeln!(
                    stdout,
                    "{:>4} {:>7.3} {:>7.3} {:>7.3} {:>8}",
                    d.part, d.hot, d.warm, d.cold, d.count
                );
            }
            analysis::deciles_csv(&rows)
        }
        Analysis::Locality => {
            let streams = match audit {
                Some(p) => vec![analysis::fault_sectors(&read_audit(p)?)],
                None => analysis::relaunch_streams(&index),
            };
            let mut rows = Vec::new();
            for &n in ns {
                let p = analysis::pooled_locality(&streams, n)?;
                let _ = writeln!(stdout, "P({n}) = {p:.4}");
                rows.push((n, p));
            }
            analysis::locality_csv(&rows)
        }
        Analysis::Coverage => {
            let log = read_audit(need_audit()?)?;
            let rows = analysis::coverage_all(&log, &index)?;
            let (c, a) = analysis::mean_coverage(&rows);
            let a = a.map(|x| format!("{x:.4}")).unwrap_or_else(|| "none".into());
            let _ = writeln!(stdout, "launches {}  coverage {c:.4}  accuracy {a}", rows.len());
            analysis::coverage_csv(&rows)
        }
    };
    if let Some(p) = out {
        write_file(p, csv.as_bytes())?;
    }
    Ok(())
}

fn synthetic_corpus(kind: Synthetic, seed: u64, bytes: usize) -> Vec<u8> {
    let model = match kind {
        Synthetic::Templated => PayloadModel::default(),
        Synthetic::Random => PayloadModel::Random,
        Synthetic::ZeroRuns => PayloadModel::ZeroRuns,
    };
    let mut c = corpus(model, seed, bytes);
    c.truncate(bytes);
    c
}

fn sweep_table(rows: &[CodecSample]) -> String {
    let mut s = format!(
        "{:>8} {:>12} {:>12} {:>8}\n",
        "chunk", "comp_ns/op", "decomp_ns/op", "ratio"
    );
    for r in rows {
        s += &format!(
            "{:>8} {:>12.1} {:>12.1} {:>8.3}\n",
            r.chunk.to_string(),
            r.compress_ns_per_op(),
            r.decompress_ns_per_op(),
            r.ratio
        );
    }
    s
}

/// Least-squares line `ns_per_op(chunk) = a + b * chunk_bytes`, both clamped
/// at zero.
fn fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    ((my - b * mx).max(0.0), b)
}

fn calibrate(bytes: usize, reps: usize) -> CostModel {
    let data = synthetic_corpus(Synthetic::Templated, 1, bytes);
    let sizes: Vec<ChunkSizeClass> = ChunkSizeClass::ALL
        .iter()
        .copied()
        .filter(|c| c.bytes() <= data.len())
        .collect();
    let rows: Vec<CodecSample> = sizes
        .iter()
        .map(|&c| crate::compressor::measure_codec(&data, c, reps))
        .collect();
    let comp: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.chunk.bytes() as f64, r.compress_ns_per_op()))
        .collect();
    let decomp: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.chunk.bytes() as f64, r.decompress_ns_per_op()))
        .collect();
    let (ca, cb) = fit(&comp);
    let (da, db) = fit(&decomp);
    CostModel {
        compress_ns_per_op: ca,
        compress_ns_per_byte: cb,
        decompress_ns_per_op: da,
        decompress_ns_per_byte: db,
        ..CostModel::default()
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { spec, out } => {
            let spec: GeneratorSpec = read_json(&spec)?;
            let events = generate(&spec)?;
            let n = write_trace_file(&events, &out)?;
            let _ = writeln!(stdout, "{} events, {n} bytes, id {}", events.len(), trace_id(&events));
        }
        Command::Replay(a) => run_replay(&a, stdout)?,
        Command::Analyze {
            what,
            trace,
            audit,
            n,
            out,
        } => run_analyze(what, &trace, audit.as_deref(), &n, out.as_deref(), stdout)?,
        Command::SweepChunks {
            corpus,
            synthetic,
            bytes,
            seed,
            sizes,
            reps,
            out,
        } => {
            let sizes = parse_size_list(&sizes)?;
            let data = match corpus {
                Some(p) => std::fs::read(&p).map_err(io(p.display().to_string()))?,
                None => synthetic_corpus(synthetic, seed, parse_bytes(&bytes)? as usize),
            };
            let rows = analysis::chunk_sweep(&data, &sizes, reps)?;
            let _ = write!(stdout, "{}", sweep_table(&rows));
            if let Some(p) = out {
                write_file(&p, analysis::sweep_csv(&rows).as_bytes())?;
            }
        }
        Command::Calibrate { out, bytes, reps } => {
            let model = calibrate(parse_bytes(&bytes)? as usize, reps);
            let json = serde_json::to_string_pretty(&model).expect("cost model serializes") + "\n";
            write_file(&out, json.as_bytes())?;
            let _ = write!(stdout, "{json}");
        }
        Command::Compare {
            baseline,
            candidate,
            out,
        } => {
            let a: Report = read_json(&baseline)?;
            let b: Report = read_json(&candidate)?;
            let cmp = compare(&a, &b)?;
            let _ = write!(stdout, "{}", cmp.to_table());
            if let Some(p) = out {
                write_file(&p, cmp.to_csv().as_bytes())?;
            }
        }
        Command::ExportJsonl { trace, out } => {
            let events = load_trace(&trace)?;
            let f = File::create(&out).map_err(io(out.display().to_string()))?;
            export_jsonl(&events, BufWriter::new(f))?;
            let _ = writeln!(stdout, "{} events", events.len());
        }
        Command::ImportJsonl { input, out } => {
            let f = File::open(&input).map_err(io(input.display().to_string()))?;
            let events = import_jsonl(BufReader::new(f))?;
            crate::trace::validate(&events)?;
            write_trace_file(&events, &out)?;
            let _ = writeln!(stdout, "{} events", events.len());
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{shown}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{shown}");
                    1
                }
            };
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            1
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}
