//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails.

// `!(x >= t)` is meant: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aswap::analysis;
use aswap::compressor::{compress, decode_chunks, decompress, encode_chunks, measure_codec, ChunkSizeClass};
use aswap::engine::{
    replay, write_audit_jsonl, Action, AuditRecord, Engine, Scenario, Scheme, SchemeConfig, Source, TierKind,
};
use aswap::hotness::HotnessLevel;
use aswap::metrics::{CostModel, Report};
use aswap::trace::generate::{corpus, PayloadSource};
use aswap::trace::{generate, EventKind, GeneratorSpec, PageId, PayloadModel, TraceEvent, TraceIndex, Uid};

const PAGE: u64 = 4096;

type Outcome = Result<String, String>;
type Criterion = (u8, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn cfg(scheme: Scheme, scenario: Scenario, sizes: &str, mem: u64, zpool: u64) -> SchemeConfig {
    SchemeConfig::new(scheme, scenario, sizes.parse().unwrap(), mem, zpool)
}

fn pages_of(events: &[TraceEvent]) -> Vec<PageId> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for ev in events {
        if let EventKind::Touch { id, .. } = &ev.kind {
            if seen.insert(*id) {
                out.push(*id);
            }
        }
    }
    out
}

fn audit_bytes(audit: &[AuditRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_audit_jsonl(audit, &mut out).unwrap();
    out
}

// 1 ----------------------------------------------------------------------

fn fuzz_input(rng: &mut ChaCha8Rng, kind: usize, chunk: usize) -> Vec<u8> {
    let len = match rng.gen_range(0..4) {
        0 => rng.gen_range(0..64),
        1 => chunk * rng.gen_range(1..3) + rng.gen_range(0..3) - 1,
        _ => rng.gen_range(0..24_000),
    };
    match kind {
        0 => (0..len).map(|_| rng.gen()).collect(),
        1 => vec![0; len],
        2 => vec![rng.gen(); len],
        3 => {
            let period = rng.gen_range(1..300);
            let pat: Vec<u8> = (0..period).map(|_| rng.gen()).collect();
            (0..len).map(|i| pat[i % period]).collect()
        }
        4 => {
            let words = [&b"alpha "[..], b"beta ", b"gamma\n", b"delta, ", b"x", b"  "];
            let mut v = Vec::with_capacity(len);
            while v.len() < len {
                v.extend_from_slice(words[rng.gen_range(0..words.len())]);
            }
            v.truncate(len);
            v
        }
        5 => {
            let mut v = vec![0u8; len];
            for _ in 0..len / 50 {
                let i = rng.gen_range(0..len);
                v[i] = rng.gen();
            }
            v
        }
        _ => {
            let mut v = corpus(PayloadModel::default(), rng.gen(), len.max(1));
            v.truncate(len);
            for _ in 0..len / 200 {
                let i = rng.gen_range(0..len);
                v[i] ^= 0x5a;
            }
            v
        }
    }
}

fn codec_soundness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0dec);
    let mut failures = Vec::new();
    let mut per_class = [0usize; 11];
    for i in 0..10_000 {
        let class = ChunkSizeClass::ALL[i % 11];
        let data = fuzz_input(&mut rng, i % 7, class.bytes());
        let chunks = compress(&data, class);
        let mut wire = Vec::new();
        encode_chunks(&chunks, &mut wire);
        let direct = decompress(&chunks).ok();
        let via_wire = decode_chunks(&wire).ok().and_then(|c| decompress(&c).ok());
        if direct.as_deref() != Some(&data[..]) || via_wire.as_deref() != Some(&data[..]) {
            failures.push((i, class.bytes(), data.len()));
        }
        per_class[i % 11] += 1;
    }
    let took = start.elapsed();
    ensure!(
        failures.is_empty(),
        "{} failures, first {:?}",
        failures.len(),
        failures[0]
    );
    ensure!(per_class.iter().all(|&n| n > 0), "chunk class not covered");
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!(
        "10000 inputs over 11 chunk classes, 0 failures, {:.1} s",
        took.as_secs_f64()
    ))
}

// 2 and 3 ----------------------------------------------------------------

struct Sweep {
    ratio: Vec<f64>,
    comp_per_op: Vec<f64>,
}

fn sweeps() -> &'static Vec<Sweep> {
    static S: OnceLock<Vec<Sweep>> = OnceLock::new();
    S.get_or_init(|| {
        (1..=20u64)
            .map(|seed| {
                let data = corpus(PayloadModel::default(), seed, 8 << 20);
                assert!(data.len() >= 8 << 20);
                let rows: Vec<_> = ChunkSizeClass::ALL
                    .iter()
                    .map(|&c| measure_codec(&data, c, 1))
                    .collect();
                Sweep {
                    ratio: rows.iter().map(|r| r.ratio).collect(),
                    comp_per_op: rows.iter().map(|r| r.compress_ns_per_op()).collect(),
                }
            })
            .collect()
    })
}

fn ratio_trend() -> Outcome {
    let s = sweeps();
    let gains: Vec<f64> = s.iter().map(|w| w.ratio[10] / w.ratio[0]).collect();
    let monotone = s.iter().filter(|w| w.ratio.windows(2).all(|p| p[1] >= p[0])).count();
    let worst = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure!(worst >= 1.5, "ratio(128K)/ratio(128) = {worst:.3} < 1.5");
    ensure!(
        monotone * 100 >= 95 * s.len(),
        "non-decreasing in {monotone}/{} corpora",
        s.len()
    );
    Ok(format!(
        "8 MiB corpora: ratio {:.2} -> {:.2} (gain >= {worst:.2}), non-decreasing in {monotone}/20",
        s[0].ratio[0], s[0].ratio[10]
    ))
}

/// Faults one page out of a freshly compressed extent built at `sizes`.
fn fault_charge(sizes: &str, group: u64) -> (f64, f64) {
    let src = PayloadSource::new(PayloadModel::default(), 3);
    let mut e = Engine::new(
        cfg(Scheme::Ariadne, Scenario::Al, sizes, 256 * PAGE, 256 * PAGE),
        CostModel::default(),
    )
    .unwrap()
    .with_audit(true);
    let mut seq = 0;
    let mut step = |e: &mut Engine, kind| {
        seq += 1;
        e.step(&TraceEvent::new(seq, kind)).unwrap();
    };
    // Pages first touched outside a launch window start cold.
    step(&mut e, EventKind::Foreground { uid: 1 });
    for pfn in 0..8 {
        let id = PageId::new(1, pfn);
        step(
            &mut e,
            EventKind::Touch {
                id,
                payload: Some(src.page(1, pfn)),
                write: false,
            },
        );
    }
    let r = e.reclaim(1000, group * PAGE).unwrap();
    assert_eq!((r.victims as u64, r.extents_created), (group, 1));
    let victim = (0..8)
        .map(|p| PageId::new(1, p))
        .find(|id| e.tier_of(id) == Some(TierKind::Zpool))
        .unwrap();
    let f = e.handle_fault(1001, victim).unwrap();
    assert_eq!(f.source, Source::Zpool);
    let merge: f64 = e
        .audit()
        .iter()
        .filter(|r| r.seq == 1001 && r.action == Action::MergeBack)
        .filter_map(|r| r.ns)
        .sum();
    (f.charged_ns, merge)
}

fn latency_trend() -> Outcome {
    let s = sweeps();
    let slower = s.iter().filter(|w| w.comp_per_op[0] >= w.comp_per_op[10]).count();
    ensure!(slower == 0, "128 B compress not faster per op in {slower} corpora");

    let m = CostModel::default();
    let byte_charge_4k = 4096.0 * m.decompress_ns_per_byte;
    let (c4, merge4) = fault_charge("4K-4K-4K", 1);
    let (c16, merge16) = fault_charge("16K-16K-16K", 4);
    let merge_oracle = m.compress_ns(1, 3 * PAGE);
    ensure!(merge4 == 0.0, "4K fault merged back {merge4}");
    ensure!(c4 == byte_charge_4k + m.decompress_ns_per_op, "4K fault charged {c4}");
    ensure!(merge16 == merge_oracle, "merge-back {merge16} != {merge_oracle}");
    let expect16 = 4.0 * byte_charge_4k + m.decompress_ns_per_op + merge_oracle;
    ensure!(c16 == expect16, "16K fault charged {c16}, expected {expect16}");
    Ok(format!(
        "compress per op {:.0} ns at 128 B vs {:.0} ns at 128 KiB; 16K fault {c16} ns = 4 x {byte_charge_4k} + {} + merge {merge16}",
        s[0].comp_per_op[0],
        s[0].comp_per_op[10],
        m.decompress_ns_per_op
    ))
}

// 4 and 5 ----------------------------------------------------------------

fn long_trace() -> &'static Vec<TraceEvent> {
    static T: OnceLock<Vec<TraceEvent>> = OnceLock::new();
    T.get_or_init(|| {
        generate(&GeneratorSpec {
            app_count: 10,
            pages_per_app: 1024,
            relaunch_count: 24,
            warm_fraction: 0.06,
            seed: 11,
            ..GeneratorSpec::default()
        })
        .unwrap()
    })
}

struct LongRun {
    label: String,
    audit: Vec<AuditRecord>,
}

fn long_runs() -> &'static Result<Vec<LongRun>, String> {
    static R: OnceLock<Result<Vec<LongRun>, String>> = OnceLock::new();
    R.get_or_init(|| {
        let events = long_trace();
        let pages = pages_of(events);
        let foot = pages.len() as u64 * PAGE;
        let mem = foot / 5 / PAGE * PAGE;
        let zpool = foot / 8 / PAGE * PAGE;
        let mut out = Vec::new();
        for c in [
            cfg(Scheme::Zram, Scenario::Al, "1K-2K-16K", mem, zpool),
            cfg(Scheme::Ariadne, Scenario::Al, "1K-2K-16K", mem, zpool),
            cfg(Scheme::Ariadne, Scenario::Ehl, "1K-4K-16K", mem, zpool),
        ] {
            let label = c.label();
            let mut e = Engine::new(c, CostModel::default()).unwrap().with_audit(true);
            for (i, ev) in events.iter().enumerate() {
                e.step(ev).map_err(|err| format!("{label}: {err}"))?;
                if i % 5000 == 0 {
                    e.check_conservation()
                        .map_err(|m| format!("{label} at seq {}: {m}", ev.seq))?;
                }
            }
            e.check_conservation().map_err(|m| format!("{label} at end: {m}"))?;

            let mut count: BTreeMap<TierKind, usize> = BTreeMap::new();
            for id in &pages {
                let t = e.tier_of(id).ok_or_else(|| format!("{label}: {id} has no tier"))?;
                *count.entry(t).or_default() += 1;
            }
            if count.values().sum::<usize>() != e.known_pages() || e.known_pages() != pages.len() {
                return Err(format!(
                    "{label}: {} known pages, {} in trace",
                    e.known_pages(),
                    pages.len()
                ));
            }
            let mut in_zpool = 0;
            let mut zbytes = 0;
            for x in e.zpool().extents() {
                for m in &x.members {
                    if e.tier_of(m) != Some(TierKind::Zpool) {
                        return Err(format!("{label}: zpool member {m} not in zpool tier"));
                    }
                }
                in_zpool += x.members.len();
                zbytes += x.total_bytes();
            }
            let zp = e.zpool();
            if in_zpool != count.get(&TierKind::Zpool).copied().unwrap_or(0)
                || zbytes != zp.used_bytes()
                || zp.used_bytes() + zp.free_bytes() != zp.capacity()
            {
                return Err(format!("{label}: zpool accounting {zbytes} vs {}", zp.used_bytes()));
            }
            let swapped: u64 = e
                .audit()
                .iter()
                .filter(|r| r.action == Action::SwapOut)
                .filter_map(|r| r.bytes)
                .sum();
            let flash = e.swap().stats().flash_write_bytes;
            if flash != swapped || flash != e.counters().swap_out_bytes || e.counters().swap_out_ops == 0 {
                return Err(format!("{label}: flash writes {flash}, swapped-out extents {swapped}"));
            }
            out.push(LongRun {
                label: format!("{label} ({} swap-outs)", e.counters().swap_out_ops),
                audit: e.take_audit(),
            });
        }
        Ok(out)
    })
}

fn conservation() -> Outcome {
    let n = long_trace().len();
    ensure!(n >= 100_000, "trace has only {n} events");
    let runs = long_runs().as_ref().map_err(Clone::clone)?;
    let labels: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    Ok(format!("{n} events; exact under {}", labels.join(", ")))
}

/// Cold-before-warm-before-hot within and across each reclaim pass.
fn victim_order_violations(audit: &[AuditRecord]) -> usize {
    let mut bad = 0;
    let mut pass: Vec<HotnessLevel> = Vec::new();
    for r in audit {
        match r.action {
            Action::Compress => pass.push(r.level.unwrap()),
            Action::Reclaim => {
                bad += pass.windows(2).filter(|w| w[1] < w[0]).count();
                if let (Some(rest), Some(top)) = (r.level, pass.iter().max()) {
                    bad += usize::from(*top > rest);
                }
                pass.clear();
            }
            _ => {}
        }
    }
    bad
}

/// Replays the trace through an independent global LRU and compares every
/// baseline victim with the oracle's least recently used page.
fn lru_oracle_mismatches(events: &[TraceEvent], audit: &[AuditRecord]) -> (usize, usize) {
    let mut stamp_of: HashMap<PageId, u64> = HashMap::new();
    let mut order: BTreeMap<u64, PageId> = BTreeMap::new();
    let mut clock = 0;
    let mut a = 0;
    let (mut checked, mut bad) = (0, 0);
    for ev in events {
        if let EventKind::Touch { id, .. } = &ev.kind {
            clock += 1;
            if let Some(old) = stamp_of.insert(*id, clock) {
                order.remove(&old);
            }
            order.insert(clock, *id);
        }
        while a < audit.len() && audit[a].seq == ev.seq {
            let r = &audit[a];
            if r.action == Action::Compress {
                let victim = PageId::new(r.uid.unwrap(), r.pfn.unwrap());
                let expect = order.pop_first().map(|(_, p)| p);
                if let Some(p) = expect {
                    stamp_of.remove(&p);
                }
                checked += 1;
                bad += usize::from(expect != Some(victim));
            }
            a += 1;
        }
    }
    (checked, bad)
}

fn prefetch_excess(audit: &[AuditRecord]) -> usize {
    let mut by_seq: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in audit {
        let s = by_seq.entry(r.seq).or_default();
        match r.action {
            Action::Fault | Action::BufferHit => s.0 += 1,
            Action::Prefetch => s.1 += 1,
            _ => {}
        }
    }
    by_seq.values().filter(|(f, p)| p > f).count()
}

fn policy_invariants() -> Outcome {
    let runs = long_runs().as_ref().map_err(Clone::clone)?;
    let (zram, al, ehl) = (&runs[0].audit, &runs[1].audit, &runs[2].audit);
    let order = victim_order_violations(al) + victim_order_violations(ehl);
    ensure!(order == 0, "(a) {order} victim-order violations");
    let hot = ehl
        .iter()
        .filter(|r| r.action == Action::Compress && r.level == Some(HotnessLevel::Hot))
        .count();
    ensure!(hot == 0, "(b) EHL compressed {hot} hot pages");
    let (checked, bad) = lru_oracle_mismatches(long_trace(), zram);
    ensure!(
        checked > 0 && bad == 0,
        "(c) {bad} of {checked} baseline victims differ from LRU oracle"
    );
    let excess = prefetch_excess(al) + prefetch_excess(ehl);
    ensure!(excess == 0, "(d) {excess} faults with more than one prefetch");
    let prefetches = al.iter().chain(ehl).filter(|r| r.action == Action::Prefetch).count();
    ensure!(prefetches > 0, "(d) no prefetch exercised");
    Ok(format!(
        "0 violations; {checked} baseline victims match LRU oracle; {prefetches} prefetches"
    ))
}

// 6 ----------------------------------------------------------------------

struct Builder(Vec<TraceEvent>);

impl Builder {
    fn push(&mut self, kind: EventKind) {
        let seq = self.0.len() as u64 + 1;
        self.0.push(TraceEvent::new(seq, kind));
    }

    fn touch(&mut self, uid: Uid, pfn: u64) {
        self.push(EventKind::Touch {
            id: PageId::new(uid, pfn),
            payload: None,
            write: false,
        });
    }

    fn window(&mut self, uid: Uid, launch: u32, hot: &[u64], after: &[u64]) {
        self.push(EventKind::LaunchBegin { uid, launch });
        for &p in hot {
            self.touch(uid, p);
        }
        self.push(EventKind::LaunchEnd { uid });
        for &p in after {
            self.touch(uid, p);
        }
    }
}

/// Independent per-pair similarity and reuse plus pooled P(2).
fn oracle_stats(events: &[TraceEvent]) -> (f64, f64, f64) {
    #[derive(Default)]
    struct App {
        open: bool,
        hot: Vec<HashSet<PageId>>,
        after: Vec<HashSet<PageId>>,
        streams: Vec<Vec<u64>>,
    }
    let mut apps: BTreeMap<Uid, App> = BTreeMap::new();
    for ev in events {
        match &ev.kind {
            EventKind::LaunchBegin { uid, .. } => {
                let a = apps.entry(*uid).or_default();
                a.open = true;
                a.hot.push(HashSet::new());
                a.after.push(HashSet::new());
                a.streams.push(Vec::new());
            }
            EventKind::LaunchEnd { uid } => apps.get_mut(uid).unwrap().open = false,
            EventKind::Touch { id, .. } => {
                let Some(a) = apps.get_mut(&id.uid) else { continue };
                let Some(k) = a.hot.len().checked_sub(1) else { continue };
                if a.open {
                    a.hot[k].insert(*id);
                    a.streams[k].push(id.pfn);
                } else {
                    a.after[k].insert(*id);
                }
            }
            EventKind::Foreground { .. } => {}
        }
    }
    let (mut sim, mut reuse, mut pairs) = (0.0, 0.0, 0);
    let (mut hits, mut windows) = (0usize, 0usize);
    for a in apps.values() {
        for k in 0..a.hot.len().saturating_sub(1) {
            let (h0, h1, w1) = (&a.hot[k], &a.hot[k + 1], &a.after[k + 1]);
            sim += h0.intersection(h1).count() as f64 / h1.len() as f64;
            reuse += h0.iter().filter(|p| h1.contains(p) || w1.contains(p)).count() as f64 / h0.len() as f64;
            pairs += 1;
        }
        for s in &a.streams {
            hits += s.windows(2).filter(|w| w[1] == w[0] + 1).count();
            windows += s.len().saturating_sub(1);
        }
    }
    (sim / pairs as f64, reuse / pairs as f64, hits as f64 / windows as f64)
}

fn analyzer_oracles() -> Outcome {
    let hot: Vec<u64> = (0..16).collect();
    let mut same = Builder(Vec::new());
    same.window(1, 0, &hot, &hot);
    same.window(1, 1, &hot, &hot);
    let mut disjoint = Builder(Vec::new());
    disjoint.window(1, 0, &hot, &[]);
    disjoint.window(1, 1, &(100..116).map(|p| p * 2).collect::<Vec<_>>(), &[300, 301]);

    for (events, want) in [(&same.0, 1.0), (&disjoint.0, 0.0)] {
        let index = TraceIndex::build(events);
        let (s, r) = analysis::mean_pair(&analysis::similarity_all(&index).map_err(|e| e.to_string())?);
        let p2 = analysis::pooled_locality(&analysis::relaunch_streams(&index)[1..], 2).map_err(|e| e.to_string())?;
        let p4 = analysis::pooled_locality(&analysis::relaunch_streams(&index)[1..], 4).map_err(|e| e.to_string())?;
        ensure!(
            s == want && r == want && p2 == want && p4 == want,
            "degenerate {want}: similarity {s}, reuse {r}, P2 {p2}, P4 {p4}"
        );
    }

    let mut detail = Vec::new();
    for seed in [42, 7, 1234] {
        let events = generate(&GeneratorSpec {
            relaunch_count: 10,
            warm_fraction: 0.06,
            seed,
            ..GeneratorSpec::default()
        })
        .unwrap();
        let index = TraceIndex::build(&events);
        let (s, r) = analysis::mean_pair(&analysis::similarity_all(&index).map_err(|e| e.to_string())?);
        let p2 = analysis::pooled_locality(&analysis::relaunch_streams(&index), 2).map_err(|e| e.to_string())?;
        let (os, or, op2) = oracle_stats(&events);
        ensure!(
            (s - os).abs() < 1e-12 && (r - or).abs() < 1e-12 && (p2 - op2).abs() < 1e-12,
            "seed {seed}: analyzer ({s}, {r}, {p2}) disagrees with oracle ({os}, {or}, {op2})"
        );
        ensure!((os - 0.7).abs() <= 0.05, "seed {seed}: similarity {os:.4}");
        ensure!((or - 0.98).abs() <= 0.02, "seed {seed}: reuse {or:.4}");
        ensure!((op2 - 0.8).abs() <= 0.05, "seed {seed}: P2 {op2:.4}");
        detail.push(format!("{os:.3}/{or:.3}/{op2:.3}"));
    }
    Ok(format!(
        "degenerate cases exact; generated similarity/reuse/P2 {}",
        detail.join(", ")
    ))
}

// 7, 8 and 9 -------------------------------------------------------------

struct Reference {
    events: Vec<TraceEvent>,
    mem: u64,
    zpool: u64,
    zram: Report,
    al: Report,
    al_audit: Vec<AuditRecord>,
    ehl: Report,
    took: Duration,
}

fn reference_config(scheme: Scheme, scenario: Scenario, sizes: &str, r: (u64, u64)) -> SchemeConfig {
    cfg(scheme, scenario, sizes, r.0, r.1)
}

fn reference() -> &'static Reference {
    static R: OnceLock<Reference> = OnceLock::new();
    R.get_or_init(|| {
        let start = Instant::now();
        let events = generate(&GeneratorSpec {
            app_count: 10,
            pages_per_app: 1024,
            relaunch_count: 10,
            hot_similarity: 0.7,
            reuse: 0.98,
            consecutive2: 0.8,
            warm_fraction: 0.06,
            ..GeneratorSpec::default()
        })
        .unwrap();
        let foot = pages_of(&events).len() as u64 * PAGE;
        let (mem, zpool) = (foot / 5 / PAGE * PAGE, foot * 3 / 5 / PAGE * PAGE);
        let run = |c: SchemeConfig, audit: bool| replay(&events, c, CostModel::default(), audit).unwrap();
        let zram = run(
            reference_config(Scheme::Zram, Scenario::Al, "1K-2K-16K", (mem, zpool)),
            false,
        )
        .report;
        let al = run(
            reference_config(Scheme::Ariadne, Scenario::Al, "1K-2K-16K", (mem, zpool)),
            true,
        );
        let ehl = run(
            reference_config(Scheme::Ariadne, Scenario::Ehl, "1K-4K-16K", (mem, zpool)),
            false,
        )
        .report;
        Reference {
            mem,
            zpool,
            zram,
            al: al.report,
            al_audit: al.audit,
            ehl,
            took: start.elapsed(),
            events,
        }
    })
}

fn end_to_end() -> Outcome {
    let r = reference();
    let (z, a, e) = (&r.zram.totals, &r.al.totals, &r.ehl.totals);
    for (name, t) in [("zram", z), ("AL", a), ("EHL", e)] {
        ensure!(
            t.compressed_fraction_peak >= 0.6,
            "{name} peak compressed fraction {:.3}",
            t.compressed_fraction_peak
        );
    }
    let lat = 1.0 - a.latency_ns / z.latency_ns;
    let cpu = 1.0 - a.cpu.total_ns / z.cpu.total_ns;
    let (zr, er) = (z.compression_ratio.unwrap_or(0.0), e.compression_ratio.unwrap_or(0.0));
    ensure!(lat >= 0.30, "AL relaunch latency only {:.1}% lower", lat * 100.0);
    ensure!(cpu >= 0.10, "AL CPU only {:.1}% lower", cpu * 100.0);
    ensure!(er >= zr, "EHL ratio {er:.3} < baseline {zr:.3}");
    ensure!(r.took < Duration::from_secs(300), "took {:?}", r.took);
    Ok(format!(
        "{} events, mem {} MiB, zpool {} MiB, {:.0}% compressed: latency -{:.1}%, CPU -{:.1}%, EHL ratio {er:.3} vs {zr:.3}, {:.1} s",
        r.events.len(),
        r.mem >> 20,
        r.zpool >> 20,
        z.compressed_fraction_peak * 100.0,
        lat * 100.0,
        cpu * 100.0,
        r.took.as_secs_f64()
    ))
}

fn coverage_accuracy() -> Outcome {
    let r = reference();
    let index = TraceIndex::build(&r.events);
    let rows = analysis::coverage_all(&r.al_audit, &index).map_err(|e| e.to_string())?;
    let (cov, acc) = analysis::mean_coverage(&rows);
    let acc = acc.ok_or("no launch had a non-empty hot list")?;
    ensure!((0.6..=0.8).contains(&cov), "coverage {cov:.4}");
    ensure!(acc >= 0.85, "accuracy {acc:.4}");
    Ok(format!(
        "{} relaunches: coverage {cov:.3}, accuracy {acc:.3}",
        rows.len()
    ))
}

fn determinism() -> Outcome {
    let r = reference();
    let mut n = 0;
    for c in [
        reference_config(Scheme::Ariadne, Scenario::Al, "1K-2K-16K", (r.mem, r.zpool)),
        reference_config(Scheme::Zram, Scenario::Al, "1K-2K-16K", (r.mem, r.zpool)),
    ] {
        let a = replay(&r.events, c.clone(), CostModel::default(), true).map_err(|e| e.to_string())?;
        let b = replay(&r.events, c.clone(), CostModel::default(), true).map_err(|e| e.to_string())?;
        ensure!(a.report.to_json() == b.report.to_json(), "{} report differs", c.label());
        let (ja, jb) = (audit_bytes(&a.audit), audit_bytes(&b.audit));
        ensure!(ja == jb, "{} audit differs", c.label());
        if c.scheme == Scheme::Ariadne {
            ensure!(
                a.report.to_json() == r.al.to_json(),
                "report differs from the first run"
            );
            ensure!(ja == audit_bytes(&r.al_audit), "audit differs from the first run");
        }
        n += ja.len();
    }
    Ok(format!("reports and {} audit bytes identical across runs", n))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "codec soundness", codec_soundness),
        (2, "ratio trend", ratio_trend),
        (3, "latency trend", latency_trend),
        (4, "conservation", conservation),
        (5, "policy invariants", policy_invariants),
        (6, "analyzer oracles", analyzer_oracles),
        (7, "end-to-end", end_to_end),
        (8, "coverage/accuracy", coverage_accuracy),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(d) => println!("criterion {id} {name}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({d})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
