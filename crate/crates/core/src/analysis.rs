//! Workload statistics over traces and audit logs.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{measure_codec, ChunkSizeClass, CodecSample};
use crate::engine::{Action, AuditRecord};
use crate::hotness::HotnessLevel;
use crate::trace::{LaunchWindow, PageId, TraceIndex, Uid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

type Result<T> = std::result::Result<T, AnalysisError>;

fn insufficient<T>(msg: impl Into<String>) -> Result<T> {
    Err(AnalysisError::InsufficientData(msg.into()))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Similarity and reuse between launch `pair` and launch `pair + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub uid: Uid,
    pub pair: u32,
    pub similarity: f64,
    pub reuse: f64,
}

fn pair_stat(a: &LaunchWindow, b: &LaunchWindow) -> PairStat {
    let ha: HashSet<PageId> = a.hot.iter().copied().collect();
    let hb: HashSet<PageId> = b.hot.iter().copied().collect();
    let wb: HashSet<PageId> = b.warm.iter().copied().collect();
    let same = ha.intersection(&hb).count();
    let reused = ha.iter().filter(|p| hb.contains(p) || wb.contains(p)).count();
    PairStat {
        uid: a.uid,
        pair: a.launch,
        similarity: ratio(same, hb.len()),
        reuse: ratio(reused, ha.len()),
    }
}

/// One row per consecutive pair of launches of `uid`.
pub fn hot_similarity(index: &TraceIndex, uid: Uid) -> Result<Vec<PairStat>> {
    let w = index.windows(uid);
    if w.len() < 2 {
        return insufficient(format!("app {uid} has {} launches, need 2", w.len()));
    }
    Ok(w.windows(2).map(|p| pair_stat(&p[0], &p[1])).collect())
}

/// [`hot_similarity`] for every app with at least two launches.
pub fn similarity_all(index: &TraceIndex) -> Result<Vec<PairStat>> {
    let out: Vec<PairStat> = index
        .uids()
        .filter_map(|u| hot_similarity(index, u).ok())
        .flatten()
        .collect();
    if out.is_empty() {
        return insufficient("no app launches twice");
    }
    Ok(out)
}

pub fn mean_pair(stats: &[PairStat]) -> (f64, f64) {
    let n = stats.len().max(1) as f64;
    (
        stats.iter().map(|s| s.similarity).sum::<f64>() / n,
        stats.iter().map(|s| s.reuse).sum::<f64>() / n,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decile {
    pub part: usize,
    pub count: usize,
    pub hot: f64,
    pub warm: f64,
    pub cold: f64,
}

/// Compressions in seq order cut into ten parts; each part reports the
/// share of oracle-hot, warm and cold pages. Sizes differ by at most one,
/// larger parts last.
pub fn eviction_deciles(audit: &[AuditRecord], index: &TraceIndex) -> Result<Vec<Decile>> {
    let mut comp: Vec<(u64, PageId)> = audit
        .iter()
        .filter(|r| r.action == Action::Compress)
        .filter_map(|r| Some((r.seq, PageId::new(r.uid?, r.pfn?))))
        .collect();
    if comp.len() < 10 {
        return insufficient(format!("{} compressions, need 10", comp.len()));
    }
    comp.sort_by_key(|(s, _)| *s);
    // Oracle label: hot or warm for the app's next launch, cold otherwise.
    let mut cache: std::collections::HashMap<(Uid, u32), (HashSet<PageId>, HashSet<PageId>)> = Default::default();
    let mut label = |id: &PageId, seq: u64| -> HotnessLevel {
        let Some(w) = index.next_window_after(id.uid, seq) else {
            return HotnessLevel::Cold;
        };
        let (hot, warm) = cache
            .entry((w.uid, w.launch))
            .or_insert_with(|| (w.hot.iter().copied().collect(), w.warm.iter().copied().collect()));
        if hot.contains(id) {
            HotnessLevel::Hot
        } else if warm.contains(id) {
            HotnessLevel::Warm
        } else {
            HotnessLevel::Cold
        }
    };
    let n = comp.len();
    let base = n / 10;
    let extra = n % 10;
    let mut out = Vec::with_capacity(10);
    let mut at = 0;
    for part in 0..10 {
        let size = base + usize::from(part >= 10 - extra);
        let mut counts = [0usize; 3];
        for (seq, id) in &comp[at..at + size] {
            counts[label(id, *seq).index()] += 1;
        }
        at += size;
        out.push(Decile {
            part,
            count: size,
            cold: ratio(counts[HotnessLevel::Cold.index()], size),
            warm: ratio(counts[HotnessLevel::Warm.index()], size),
            hot: ratio(counts[HotnessLevel::Hot.index()], size),
        });
    }
    Ok(out)
}

fn run_hits(stream: &[u64], n: usize) -> usize {
    stream
        .windows(n)
        .filter(|w| (1..n).all(|k| w[0].checked_add(k as u64) == Some(w[k])))
        .count()
}

/// Fraction of length-`n` windows whose values step by exactly +1.
pub fn locality(stream: &[u64], n: usize) -> Result<f64> {
    if n < 2 {
        return insufficient("N must be at least 2");
    }
    if stream.len() < n {
        return insufficient(format!("stream of {} is shorter than N = {n}", stream.len()));
    }
    Ok(ratio(run_hits(stream, n), stream.len() - n + 1))
}

/// [`locality`] over several independent streams, counting windows inside
/// each stream only.
pub fn pooled_locality(streams: &[Vec<u64>], n: usize) -> Result<f64> {
    if n < 2 {
        return insufficient("N must be at least 2");
    }
    let (mut hits, mut total) = (0, 0);
    for s in streams.iter().filter(|s| s.len() >= n) {
        hits += run_hits(s, n);
        total += s.len() - n + 1;
    }
    if total == 0 {
        return insufficient(format!("no stream is at least N = {n} long"));
    }
    Ok(ratio(hits, total))
}

/// Page-number streams of every launch window, one per window.
pub fn relaunch_streams(index: &TraceIndex) -> Vec<Vec<u64>> {
    index
        .uids()
        .flat_map(|u| index.windows(u).iter().map(|w| w.stream.clone()))
        .collect()
}

/// Sectors of demand decodes from the zpool, in audit order.
pub fn fault_sectors(audit: &[AuditRecord]) -> Vec<u64> {
    audit
        .iter()
        .filter(|r| r.action == Action::Fault)
        .filter_map(|r| r.sector)
        .collect()
}

/// One sample per size. The corpus must hold at least one chunk of the
/// largest size.
pub fn chunk_sweep(corpus: &[u8], sizes: &[ChunkSizeClass], repetitions: usize) -> Result<Vec<CodecSample>> {
    if let Some(max) = sizes.iter().map(|s| s.bytes()).max() {
        if corpus.len() < max {
            return insufficient(format!("corpus of {} bytes is smaller than chunk {max}", corpus.len()));
        }
    }
    Ok(sizes.iter().map(|&s| measure_codec(corpus, s, repetitions)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub uid: Uid,
    pub launch: u32,
    pub coverage: f64,
    /// `None` for an empty hot list.
    pub accuracy: Option<f64>,
}

/// Hot list logged at the start of `launch`, if the audit covers it.
fn snapshot(audit: &[AuditRecord], uid: Uid, begin: u64) -> Option<BTreeSet<PageId>> {
    let lo = audit.partition_point(|r| r.seq < begin);
    let recs: Vec<&AuditRecord> = audit[lo..]
        .iter()
        .take_while(|r| r.seq == begin)
        .filter(|r| r.action == Action::HotSnapshot && r.uid == Some(uid))
        .collect();
    if recs.is_empty() {
        return None;
    }
    Some(recs.iter().filter_map(|r| Some(PageId::new(uid, r.pfn?))).collect())
}

/// How much of launch `launch` the hot list predicted, and how much of the
/// hot list that launch (or the execution after it) used.
pub fn coverage_accuracy(audit: &[AuditRecord], index: &TraceIndex, uid: Uid, launch: u32) -> Result<Coverage> {
    let Some(w) = index.window(uid, launch) else {
        return insufficient(format!("app {uid} has no launch {launch}"));
    };
    let Some(list) = snapshot(audit, uid, w.begin) else {
        return insufficient(format!("no hot-list snapshot for app {uid} launch {launch}"));
    };
    let hot: HashSet<PageId> = w.hot.iter().copied().collect();
    let warm: HashSet<PageId> = w.warm.iter().copied().collect();
    let covered = list.iter().filter(|p| hot.contains(p)).count();
    let used = list.iter().filter(|p| hot.contains(p) || warm.contains(p)).count();
    Ok(Coverage {
        uid,
        launch,
        coverage: ratio(covered, hot.len()),
        accuracy: (!list.is_empty()).then(|| ratio(used, list.len())),
    })
}

/// Coverage for every launch after each app's first.
pub fn coverage_all(audit: &[AuditRecord], index: &TraceIndex) -> Result<Vec<Coverage>> {
    let mut out = Vec::new();
    for uid in index.uids() {
        for w in index.windows(uid).iter().skip(1) {
            out.push(coverage_accuracy(audit, index, uid, w.launch)?);
        }
    }
    if out.is_empty() {
        return insufficient("no relaunches");
    }
    Ok(out)
}

/// Mean coverage and mean accuracy (over launches with a non-empty list).
pub fn mean_coverage(rows: &[Coverage]) -> (f64, Option<f64>) {
    let cov = rows.iter().map(|r| r.coverage).sum::<f64>() / rows.len().max(1) as f64;
    let acc: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    let acc = (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64);
    (cov, acc)
}

pub fn similarity_csv(rows: &[PairStat]) -> String {
    let mut s = String::from("uid,pair,similarity,reuse\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.uid, r.pair, r.similarity, r.reuse);
    }
    s
}

pub fn deciles_csv(rows: &[Decile]) -> String {
    let mut s = String::from("part,hot,warm,cold\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.part, r.hot, r.warm, r.cold);
    }
    s
}

pub fn locality_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("N,p\n");
    for (n, p) in rows {
        let _ = writeln!(s, "{n},{p:.6}");
    }
    s
}

/// Per-operation times in nanoseconds.
pub fn sweep_csv(rows: &[CodecSample]) -> String {
    let mut s = String::from("chunk,comp_ns,decomp_ns,ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.1},{:.1},{:.6}",
            r.chunk.bytes(),
            r.compress_ns_per_op(),
            r.decompress_ns_per_op(),
            r.ratio
        );
    }
    s
}

pub fn coverage_csv(rows: &[Coverage]) -> String {
    let mut s = String::from("uid,launch,coverage,accuracy\n");
    for r in rows {
        let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:.6},{acc}", r.uid, r.launch, r.coverage);
    }
    s
}
