use super::*;
use crate::trace::generate::PayloadModel;
use crate::trace::generate::{generate, GeneratorSpec, PayloadSource};

const PAGE: u64 = PAGE_SIZE as u64;

struct Script {
    seq: u64,
    events: Vec<TraceEvent>,
    src: PayloadSource,
}

impl Script {
    fn new() -> Self {
        Self {
            seq: 0,
            events: Vec::new(),
            src: PayloadSource::new(PayloadModel::default(), 7),
        }
    }

    fn push(&mut self, kind: EventKind) {
        self.seq += 1;
        self.events.push(TraceEvent::new(self.seq, kind));
    }

    fn touch(&mut self, uid: Uid, pfn: u64) {
        let id = PageId::new(uid, pfn);
        let first = !self
            .events
            .iter()
            .any(|e| matches!(&e.kind, EventKind::Touch { id: t, .. } if *t == id));
        let payload = first.then(|| self.src.page(uid, pfn));
        self.push(EventKind::Touch {
            id,
            payload,
            write: false,
        });
    }

    fn launch(&mut self, uid: Uid, launch: u32, pfns: impl IntoIterator<Item = u64>) {
        self.push(EventKind::Foreground { uid });
        self.push(EventKind::LaunchBegin { uid, launch });
        for p in pfns {
            self.touch(uid, p);
        }
        self.push(EventKind::LaunchEnd { uid });
    }
}

fn small_trace() -> Script {
    let mut s = Script::new();
    for uid in 1..=3 {
        s.launch(uid, 0, 0..8);
        for p in 8..40 {
            s.touch(uid, p);
        }
    }
    for round in 1..=3 {
        for uid in 1..=3 {
            s.launch(uid, round, (0..6).chain(10 + round as u64..14 + round as u64));
            for p in 20..30 {
                s.touch(uid, p);
            }
        }
    }
    s
}

fn check_contents(engine: &mut Engine, s: &Script) {
    let ids: BTreeMap<PageId, ()> = s
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Touch { id, .. } => Some((*id, ())),
            _ => None,
        })
        .collect();
    for id in ids.keys() {
        let got = engine.read_page(id).unwrap();
        assert_eq!(got.as_bytes(), s.src.page(id.uid, id.pfn).as_bytes(), "{id}");
    }
}

fn run_checked(cfg: SchemeConfig, s: &Script) -> Engine {
    let mut e = Engine::new(cfg, CostModel::default()).unwrap().with_audit(true);
    for ev in &s.events {
        e.step(ev).unwrap();
        e.check_conservation().unwrap();
    }
    e
}

#[test]
fn pages_survive_compression_and_faults() {
    let s = small_trace();
    for cfg in [
        SchemeConfig::zram(48 * PAGE, 64 * PAGE),
        SchemeConfig::ariadne(Scenario::Ehl, SizeTriple::default(), 48 * PAGE, 64 * PAGE),
        SchemeConfig::ariadne(Scenario::Al, SizeTriple::default(), 48 * PAGE, 64 * PAGE),
    ] {
        let mut e = run_checked(cfg.clone(), &s);
        assert!(e.counters().compress_ops > 0, "{}", cfg.label());
        assert!(e.counters().demand_faults > 0, "{}", cfg.label());
        assert!(e.compressed_pages() > 0);
        check_contents(&mut e, &s);
        assert_eq!(e.reports().len(), 9);
    }
}

#[test]
fn tiny_zpool_spills_to_swap() {
    let s = small_trace();
    for cfg in [
        SchemeConfig::zram(40 * PAGE, 2 * PAGE),
        SchemeConfig::ariadne(Scenario::Al, SizeTriple::default(), 40 * PAGE, 2 * PAGE),
    ] {
        let mut e = run_checked(cfg, &s);
        check_contents(&mut e, &s);
        let c = e.counters();
        assert!(c.swap_out_ops > 0);
        assert!(c.swap_in_ops > 0);
        assert_eq!(e.swap().stats().flash_write_bytes, e.swapped_out_bytes());
        assert_eq!(c.swap_out_bytes, e.swapped_out_bytes());
    }
}

#[test]
fn bounded_swap_reports_oom() {
    let s = small_trace();
    let mut cfg = SchemeConfig::zram(24 * PAGE, PAGE);
    cfg.swap_bytes = Some(2 * PAGE);
    let e = run_checked(cfg, &s);
    assert!(e.counters().oom_reports > 0);
    assert!(e.audit().iter().any(|r| r.action == Action::Oom));
}

#[test]
fn ehl_keeps_hot_pages() {
    let s = small_trace();
    let e = run_checked(
        SchemeConfig::ariadne(Scenario::Ehl, SizeTriple::default(), 40 * PAGE, 64 * PAGE),
        &s,
    );
    assert!(e
        .audit()
        .iter()
        .filter(|r| r.action == Action::Compress)
        .all(|r| r.level != Some(HotnessLevel::Hot)));
    assert_eq!(e.counters().by_level.hot.compress_ops, 0);
}

#[test]
fn at_most_one_prefetch_per_fault() {
    let s = small_trace();
    let e = run_checked(
        SchemeConfig::ariadne(Scenario::Al, SizeTriple::default(), 40 * PAGE, 64 * PAGE),
        &s,
    );
    let mut by_seq: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in e.audit() {
        let slot = by_seq.entry(r.seq).or_default();
        match r.action {
            Action::Fault | Action::BufferHit => slot.0 += 1,
            Action::Prefetch => slot.1 += 1,
            _ => {}
        }
    }
    assert!(by_seq.values().all(|(f, p)| p <= f));
    assert!(e.counters().prefetch_issued > 0);
    let c = e.counters();
    assert!(c.prefetch_hit + c.prefetch_wasted <= c.prefetch_issued);
}

#[test]
fn zram_never_prefetches() {
    let s = small_trace();
    let e = run_checked(SchemeConfig::zram(40 * PAGE, 64 * PAGE), &s);
    assert_eq!(e.counters().prefetch_issued, 0);
    assert!(e.buffer().is_empty());
}

#[test]
fn events_must_increase() {
    let mut e = Engine::new(SchemeConfig::zram(64 * PAGE, 64 * PAGE), CostModel::default()).unwrap();
    let ev = TraceEvent::new(5, EventKind::Foreground { uid: 1 });
    e.step(&ev).unwrap();
    assert!(matches!(e.step(&ev), Err(EngineError::OutOfOrder { seq: 5, last: 5 })));
}

#[test]
fn unmatched_end_is_protocol_error() {
    let mut e = Engine::new(SchemeConfig::zram(64 * PAGE, 64 * PAGE), CostModel::default()).unwrap();
    let ev = TraceEvent::new(1, EventKind::LaunchEnd { uid: 3 });
    assert!(matches!(e.step(&ev), Err(EngineError::Protocol { seq: 1, .. })));
}

#[test]
fn resident_access_costs_dram_only() {
    let mut s = Script::new();
    s.launch(1, 0, 0..4);
    s.launch(1, 1, 0..4);
    let e = run_checked(SchemeConfig::zram(64 * PAGE, 64 * PAGE), &s);
    let r = &e.reports()[0];
    assert_eq!(r.launch, 1);
    assert_eq!(r.sources.resident, 4);
    assert_eq!(r.latency_ns, 4.0 * CostModel::default().dram_ns(1));
}

#[test]
fn explicit_reclaim_and_fault() {
    let mut s = Script::new();
    s.launch(1, 0, 0..6);
    let mut e = run_checked(SchemeConfig::zram(64 * PAGE, 64 * PAGE), &s);
    let r = e.reclaim(100, 2 * PAGE).unwrap();
    assert_eq!((r.victims, r.extents_created), (2, 2));
    assert_eq!(e.compressed_pages(), 2);
    // Baseline evicts least recently used first.
    let id = PageId::new(1, 0);
    assert_eq!(e.tier_of(&id), Some(TierKind::Zpool));
    let f = e.handle_fault(101, id).unwrap();
    assert_eq!(f.source, Source::Zpool);
    assert!(f.charged_ns > 0.0);
    assert_eq!(e.tier_of(&id), Some(TierKind::Resident));
    e.check_conservation().unwrap();
    let logged: Vec<(u64, Action)> = e
        .audit()
        .iter()
        .filter(|r| r.seq >= 100)
        .map(|r| (r.seq, r.action))
        .collect();
    assert_eq!(
        logged,
        [
            (100, Action::Compress),
            (100, Action::Compress),
            (100, Action::Reclaim),
            (101, Action::Fault)
        ]
    );
}

#[test]
fn generated_trace_replays() {
    let spec = GeneratorSpec {
        app_count: 3,
        pages_per_app: 256,
        relaunch_count: 3,
        ..GeneratorSpec::default()
    };
    let events = generate(&spec).unwrap();
    let foot = 3 * 256 * PAGE;
    for cfg in [
        SchemeConfig::zram(foot / 3, foot / 4),
        SchemeConfig::ariadne(Scenario::Al, SizeTriple::default(), foot / 3, foot / 4),
    ] {
        let a = replay(&events, cfg.clone(), CostModel::default(), true).unwrap();
        let b = replay(&events, cfg, CostModel::default(), true).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.audit, b.audit);
        assert_eq!(a.report.totals.relaunches, 9);
        assert!(a.report.totals.compressed_fraction_peak > 0.3);
    }
}
