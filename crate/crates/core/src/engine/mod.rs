//! Trace replay over resident memory, the zpool and flash swap.
//!
//! The engine is a single-threaded state machine. Each [`Engine::step`]
//! applies one trace event and appends the actions it caused to the audit
//! log. Latency is modeled with a [`CostModel`]; only work done on behalf of
//! a relaunch window is charged to that window, prefetching is background.

pub mod audit;
pub mod config;
pub mod predecomp;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{read_audit_jsonl, write_audit_jsonl, Action, AuditRecord};
pub use config::{parse_bytes, ConfigError, Scenario, Scheme, SchemeConfig, SizeTriple};
pub use predecomp::{PredecompBuffer, Prefetched};

use crate::compressor::CodecError;
use crate::hotness::{HotnessError, HotnessLevel, HotnessState};
use crate::metrics::{
    compression_ratio, cpu_cost, CostModel, Counters, MetricsError, RelaunchReport, Report, SourceBreakdown, Totals,
};
use crate::swapdev::{SwapDevice, SwapError};
use crate::trace::{trace_id, EventKind, PageData, PageId, TraceEvent, Uid, PAGE_SIZE};
use crate::zpool::{
    split_extent, CompressedExtent, ExtentId, ExtentIdGen, Extraction, Location, PackingPolicy, Zpool, ZpoolError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event {seq} arrived after event {last}")]
    OutOfOrder { seq: u64, last: u64 },
    #[error("event {seq}: {source}")]
    Protocol { seq: u64, source: HotnessError },
    #[error(transparent)]
    Zpool(#[from] ZpoolError),
    #[error(transparent)]
    Swap(#[from] SwapError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("page {0} is not known")]
    UnknownPage(PageId),
    #[error("page {0} is already resident")]
    Resident(PageId),
}

/// Where a demand access was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Resident,
    Buffer,
    Zpool,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultResolution {
    pub source: Source,
    pub charged_ns: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReclaimReport {
    pub victims: usize,
    pub extents_created: usize,
    pub compress_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchOutcome {
    pub issued: bool,
    pub page: Option<PageId>,
}

/// Tier of one page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierKind {
    Resident,
    Buffer,
    Zpool,
    Swap,
}

#[derive(Debug, Clone)]
enum Tier {
    Resident(PageData),
    Buffer,
    Compressed(ExtentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExtentTier {
    Zpool,
    Swap(u64),
}

#[derive(Debug, Clone)]
struct ExtentInfo {
    members: Vec<PageId>,
    level: HotnessLevel,
    tier: ExtentTier,
}

#[derive(Debug, Clone, Copy, Default)]
struct Charge {
    decompress: f64,
    compress: f64,
    flash: f64,
    waste: u64,
}

impl Charge {
    fn total(&self) -> f64 {
        self.decompress + self.compress + self.flash
    }

    fn add(&mut self, o: &Charge) {
        self.decompress += o.decompress;
        self.compress += o.compress;
        self.flash += o.flash;
        self.waste += o.waste;
    }
}

#[derive(Debug, Clone)]
struct WindowAcc {
    launch: u32,
    relaunch: bool,
    hot_before: Vec<PageId>,
    latency: f64,
    sources: SourceBreakdown,
    charge: Charge,
}

/// Placement of an extent after [`Engine::place`].
#[derive(Debug, Clone, Copy)]
enum Placed {
    Zpool { sector: u64 },
    Swap,
}

pub struct Engine {
    cfg: SchemeConfig,
    cost: CostModel,
    hot: HotnessState,
    zpool: Zpool,
    swap: SwapDevice,
    ids: ExtentIdGen,
    pages: HashMap<PageId, Tier>,
    extents: HashMap<ExtentId, ExtentInfo>,
    buffer: PredecompBuffer,
    /// Global LRU of resident pages (baseline scheme only).
    lru: BTreeMap<u64, PageId>,
    lru_stamp: HashMap<PageId, u64>,
    clock: u64,
    resident: usize,
    compressed_pages: usize,
    avail_pages: i64,
    low_pages: i64,
    high_pages: i64,
    counters: Counters,
    windows: HashMap<Uid, WindowAcc>,
    launched: HashSet<Uid>,
    reports: Vec<RelaunchReport>,
    audit_enabled: bool,
    audit: Vec<AuditRecord>,
    step_log: Vec<AuditRecord>,
    last_seq: Option<u64>,
    peak_fraction: f64,
    swapped_out_bytes: u64,
}

impl Engine {
    pub fn new(cfg: SchemeConfig, cost: CostModel) -> Result<Self, EngineError> {
        let swap = SwapDevice::in_memory(cfg.swap_bytes);
        Self::with_swap(cfg, cost, swap)
    }

    /// Uses `swap` (for example a file-backed device) as the flash tier.
    pub fn with_swap(cfg: SchemeConfig, cost: CostModel, swap: SwapDevice) -> Result<Self, EngineError> {
        cfg.validate()?;
        cost.validate()?;
        let page = PAGE_SIZE as u64;
        let policy = match cfg.scheme {
            Scheme::Zram => PackingPolicy::Shared,
            Scheme::Ariadne => PackingPolicy::PerApp,
        };
        let buffer_pages = match cfg.scheme {
            Scheme::Zram => 0,
            Scheme::Ariadne => cfg.buffer_pages,
        };
        Ok(Self {
            hot: HotnessState::new(cfg.initial_hot_pages.unwrap_or(usize::MAX)),
            zpool: Zpool::new(cfg.zpool_bytes, policy)?,
            swap,
            ids: ExtentIdGen::default(),
            pages: HashMap::new(),
            extents: HashMap::new(),
            buffer: PredecompBuffer::new(buffer_pages),
            lru: BTreeMap::new(),
            lru_stamp: HashMap::new(),
            clock: 0,
            resident: 0,
            compressed_pages: 0,
            avail_pages: ((cfg.mem_bytes - buffer_pages as u64 * page) / page) as i64,
            low_pages: (cfg.low_watermark_bytes / page) as i64,
            high_pages: cfg.high_watermark_bytes.div_ceil(page) as i64,
            counters: Counters::default(),
            windows: HashMap::new(),
            launched: HashSet::new(),
            reports: Vec::new(),
            audit_enabled: false,
            audit: Vec::new(),
            step_log: Vec::new(),
            last_seq: None,
            peak_fraction: 0.0,
            swapped_out_bytes: 0,
            cfg,
            cost,
        })
    }

    /// Keeps every audit record in memory.
    pub fn with_audit(mut self, on: bool) -> Self {
        self.audit_enabled = on;
        self
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn hotness(&self) -> &HotnessState {
        &self.hot
    }

    pub fn zpool(&self) -> &Zpool {
        &self.zpool
    }

    pub fn swap(&self) -> &SwapDevice {
        &self.swap
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn buffer(&self) -> &PredecompBuffer {
        &self.buffer
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn take_audit(&mut self) -> Vec<AuditRecord> {
        std::mem::take(&mut self.audit)
    }

    pub fn reports(&self) -> &[RelaunchReport] {
        &self.reports
    }

    pub fn relaunch_report(&self, uid: Uid, launch: u32) -> Option<&RelaunchReport> {
        self.reports.iter().find(|r| r.uid == uid && r.launch == launch)
    }

    pub fn resident_pages(&self) -> usize {
        self.resident
    }

    pub fn known_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn compressed_pages(&self) -> usize {
        self.compressed_pages
    }

    pub fn compressed_fraction(&self) -> f64 {
        if self.pages.is_empty() {
            0.0
        } else {
            self.compressed_pages as f64 / self.pages.len() as f64
        }
    }

    /// Σ stored lengths of every extent ever written to swap.
    pub fn swapped_out_bytes(&self) -> u64 {
        self.swapped_out_bytes
    }

    pub fn tier_of(&self, id: &PageId) -> Option<TierKind> {
        Some(match self.pages.get(id)? {
            Tier::Resident(_) => TierKind::Resident,
            Tier::Buffer => TierKind::Buffer,
            Tier::Compressed(e) => match self.extents[e].tier {
                ExtentTier::Zpool => TierKind::Zpool,
                ExtentTier::Swap(_) => TierKind::Swap,
            },
        })
    }

    /// Current contents of a page, wherever it lives. Reading does not
    /// change simulator state or counters.
    pub fn read_page(&mut self, id: &PageId) -> Result<PageData, EngineError> {
        match self.pages.get(id).ok_or(EngineError::UnknownPage(*id))? {
            Tier::Resident(d) => Ok(d.clone()),
            Tier::Buffer => Ok(self.buffer.get(id).expect("buffered page").data.clone()),
            Tier::Compressed(e) => {
                let extent = match self.extents[e].tier {
                    ExtentTier::Zpool => self.zpool.get(*e).cloned().expect("zpool extent"),
                    ExtentTier::Swap(slot) => self.swap.peek(slot)?,
                };
                let i = extent.position(id).expect("member");
                Ok(extent.decode()?.swap_remove(i))
            }
        }
    }

    fn log(&mut self, r: AuditRecord) {
        self.step_log.push(r);
    }

    /// Applies one event; returns the actions it caused.
    pub fn step(&mut self, ev: &TraceEvent) -> Result<&[AuditRecord], EngineError> {
        if let Some(last) = self.last_seq {
            if ev.seq <= last {
                return Err(EngineError::OutOfOrder { seq: ev.seq, last });
            }
        }
        self.last_seq = Some(ev.seq);
        self.step_log.clear();
        let seq = ev.seq;
        let protocol = |source| EngineError::Protocol { seq, source };
        match &ev.kind {
            EventKind::Foreground { uid } => self.hot.set_foreground(*uid),
            EventKind::LaunchBegin { uid, launch } => {
                let snapshot = self.hot.on_launch_begin(*uid, *launch).map_err(protocol)?;
                for p in &snapshot {
                    self.log(
                        AuditRecord::new(seq, Action::HotSnapshot)
                            .page(p.uid, p.pfn)
                            .level(Some(HotnessLevel::Hot)),
                    );
                }
                if snapshot.is_empty() {
                    let mut r = AuditRecord::new(seq, Action::HotSnapshot);
                    r.uid = Some(*uid);
                    self.log(r);
                }
                let relaunch = !self.launched.insert(*uid);
                self.windows.insert(
                    *uid,
                    WindowAcc {
                        launch: *launch,
                        relaunch,
                        hot_before: snapshot,
                        latency: 0.0,
                        sources: SourceBreakdown::default(),
                        charge: Charge::default(),
                    },
                );
            }
            EventKind::LaunchEnd { uid } => {
                let summary = self.hot.on_relaunch_end(*uid).map_err(protocol)?;
                let acc = self
                    .windows
                    .remove(uid)
                    .expect("window open in hotness implies open here");
                let after = self.hot.list(*uid, HotnessLevel::Hot);
                let before: HashSet<PageId> = acc.hot_before.iter().copied().collect();
                let after_set: HashSet<PageId> = after.iter().copied().collect();
                if acc.relaunch {
                    let mut demoted = 0;
                    for p in acc.hot_before.iter().filter(|p| !after_set.contains(p)) {
                        demoted += 1;
                        self.log(
                            AuditRecord::new(seq, Action::Demote)
                                .page(p.uid, p.pfn)
                                .level(Some(HotnessLevel::Warm)),
                        );
                    }
                    let mut promoted = 0;
                    for p in after.iter().filter(|p| !before.contains(p)) {
                        promoted += 1;
                        self.log(
                            AuditRecord::new(seq, Action::Promote)
                                .page(p.uid, p.pfn)
                                .level(Some(HotnessLevel::Hot)),
                        );
                    }
                    debug_assert_eq!((demoted, promoted), (summary.demoted, summary.promoted));
                    self.reports.push(RelaunchReport {
                        uid: *uid,
                        launch: acc.launch,
                        latency_ns: acc.latency,
                        pages_faulted: acc.sources.total(),
                        sources: acc.sources,
                        decompress_ns: acc.charge.decompress,
                        compress_ns: acc.charge.compress,
                        flash_ns: acc.charge.flash,
                        waste_bytes: acc.charge.waste,
                    });
                }
                let mut r = AuditRecord::new(seq, Action::Rotate).ns(acc.latency);
                r.uid = Some(*uid);
                self.log(r);
            }
            EventKind::Touch { id, payload, .. } => {
                self.touch(seq, *id, payload.as_ref())?;
            }
        }
        let f = self.compressed_fraction();
        if f > self.peak_fraction {
            self.peak_fraction = f;
        }
        if self.audit_enabled {
            self.audit.extend(self.step_log.iter().cloned());
        }
        Ok(&self.step_log)
    }

    /// Replays a whole event sequence.
    pub fn run(&mut self, events: &[TraceEvent]) -> Result<(), EngineError> {
        for ev in events {
            self.step(ev)?;
        }
        Ok(())
    }

    fn bump_lru(&mut self, id: PageId) {
        if self.cfg.scheme != Scheme::Zram {
            return;
        }
        self.clock += 1;
        if let Some(old) = self.lru_stamp.insert(id, self.clock) {
            self.lru.remove(&old);
        }
        self.lru.insert(self.clock, id);
    }

    fn drop_lru(&mut self, id: &PageId) {
        if let Some(old) = self.lru_stamp.remove(id) {
            self.lru.remove(&old);
        }
    }

    fn touch(&mut self, seq: u64, id: PageId, payload: Option<&PageData>) -> Result<(), EngineError> {
        let (source, mut charge) = match self.pages.get(&id) {
            None => {
                let data = payload.cloned().unwrap_or_else(PageData::zeroed);
                self.pages.insert(id, Tier::Resident(data));
                self.resident += 1;
                self.hot.touch(id);
                (Source::Resident, Charge::default())
            }
            Some(Tier::Resident(_)) => {
                self.hot.touch(id);
                (Source::Resident, Charge::default())
            }
            Some(_) => {
                let (res, charge) = self.fault(seq, id)?;
                (res.source, charge)
            }
        };
        if let Some(p) = payload {
            if let Some(Tier::Resident(d)) = self.pages.get_mut(&id) {
                *d = p.clone();
            }
        }
        self.bump_lru(id);
        if source != Source::Resident || self.resident as i64 > self.avail_pages - self.low_pages {
            let r = self.ensure_capacity(seq)?;
            charge.add(&r);
        }
        if let Some(w) = self.windows.get_mut(&id.uid) {
            let access = match source {
                Source::Buffer => 2.0,
                _ => 1.0,
            };
            w.latency += self.cost.dram_ns(1) * access + charge.total();
            match source {
                Source::Resident => w.sources.resident += 1,
                Source::Buffer => w.sources.buffer += 1,
                Source::Zpool => w.sources.zpool += 1,
                Source::Swap => w.sources.swap += 1,
            }
            w.charge.add(&charge);
        }
        Ok(())
    }

    /// Resolves a demand access to a non-resident page. The page is resident
    /// (and touched) afterwards; reclaim is left to the caller.
    pub fn handle_fault(&mut self, seq: u64, id: PageId) -> Result<FaultResolution, EngineError> {
        self.logged(|e| {
            let (res, _) = e.fault(seq, id)?;
            e.bump_lru(id);
            Ok(res)
        })
    }

    /// Runs an operation outside [`step`](Self::step), keeping its audit
    /// records.
    fn logged<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let mark = self.step_log.len();
        let out = f(self);
        if self.audit_enabled {
            self.audit.extend(self.step_log[mark..].iter().cloned());
        }
        out
    }

    fn fault(&mut self, seq: u64, id: PageId) -> Result<(FaultResolution, Charge), EngineError> {
        let tier = self.pages.get(&id).ok_or(EngineError::UnknownPage(id))?;
        let eid = match tier {
            Tier::Resident(_) => return Err(EngineError::Resident(id)),
            Tier::Buffer => {
                let e = self.buffer.take(&id).expect("buffered page");
                self.make_resident(id, e.data);
                self.hot.touch(id);
                self.counters.demand_faults += 1;
                self.counters.prefetch_hit += 1;
                let ns = self.cost.dram_ns(1);
                self.log(AuditRecord::new(seq, Action::BufferHit).page(id.uid, id.pfn).ns(ns));
                self.prefetch_after(seq, e.addr, e.last_sector, None)?;
                return Ok((
                    FaultResolution {
                        source: Source::Buffer,
                        charged_ns: ns,
                    },
                    Charge::default(),
                ));
            }
            Tier::Compressed(e) => *e,
        };
        self.counters.demand_faults += 1;
        let info = self.extents.remove(&eid).expect("live extent");
        self.compressed_pages -= info.members.len();
        let mut charge = Charge::default();
        let (ex, src) = match info.tier {
            ExtentTier::Zpool => {
                let loc = self.zpool.get(eid).expect("zpool extent").location;
                (self.zpool.extract(eid, &[id], &mut self.ids)?, Some(loc))
            }
            ExtentTier::Swap(slot) => {
                let extent = self.swap.swap_in(slot)?;
                let len = extent.total_bytes();
                self.counters.swap_in_ops += 1;
                self.counters.swap_in_bytes += len;
                charge.flash += self.cost.flash_read_ns(len);
                self.log(
                    AuditRecord::new(seq, Action::SwapIn)
                        .page(id.uid, id.pfn)
                        .level(Some(info.level))
                        .bytes(len),
                );
                (split_extent(extent, &[id], &mut self.ids)?, None)
            }
        };
        let decoded_bytes = ex.decoded_bytes;
        let remainder_id = self.absorb_extraction(seq, &info, &ex, &mut charge)?;
        let Extraction { pages, remainder, .. } = ex;
        if let Some(r) = remainder {
            self.place_or_restore(seq, r, &mut charge)?;
        }
        let (_, data) = pages.into_iter().next().expect("wanted page decoded");
        self.make_resident(id, data);
        self.hot.touch(id);
        let sector = match src {
            Some(Location::Zpool { first_sector, .. }) => Some(first_sector),
            _ => None,
        };
        self.log(
            AuditRecord::new(seq, Action::Fault)
                .page(id.uid, id.pfn)
                .level(Some(info.level))
                .sector(sector)
                .bytes(decoded_bytes)
                .ns(charge.total()),
        );
        let source = match info.tier {
            ExtentTier::Zpool => Source::Zpool,
            ExtentTier::Swap(_) => Source::Swap,
        };
        if let Some(Location::Zpool { addr, last_sector, .. }) = src {
            self.prefetch_after(seq, addr, last_sector, remainder_id)?;
        }
        Ok((
            FaultResolution {
                source,
                charged_ns: charge.total(),
            },
            charge,
        ))
    }

    /// Books decode and merge-back work of an extraction and registers a
    /// remainder the zpool already placed. Returns that remainder's id.
    fn absorb_extraction(
        &mut self,
        seq: u64,
        info: &ExtentInfo,
        ex: &Extraction,
        charge: &mut Charge,
    ) -> Result<Option<ExtentId>, EngineError> {
        self.counters
            .record_decompress(info.level, ex.decoded_chunks, ex.decoded_bytes);
        self.counters.wasted_decompress_bytes += ex.waste_bytes;
        charge.decompress += self.cost.decompress_ns(ex.decoded_chunks, ex.decoded_bytes);
        charge.waste += ex.waste_bytes;
        if ex.recompressed_chunks > 0 {
            self.counters.record_compress(
                info.level,
                ex.recompressed_chunks,
                ex.recompressed_bytes_in,
                ex.recompressed_bytes_out,
            );
            let ns = self.cost.compress_ns(ex.recompressed_chunks, ex.recompressed_bytes_in);
            charge.compress += ns;
            let first = info
                .members
                .iter()
                .find(|m| !ex.pages.iter().any(|(p, _)| p == *m))
                .copied();
            let mut r = AuditRecord::new(seq, Action::MergeBack)
                .level(Some(info.level))
                .bytes(ex.recompressed_bytes_out)
                .ns(ns);
            if let Some(p) = first {
                r = r.page(p.uid, p.pfn);
            }
            if let Some((_, Location::Zpool { first_sector, .. })) = ex.placed_remainder {
                r = r.sector(Some(first_sector));
            }
            self.log(r);
        }
        if let Some((rid, _)) = ex.placed_remainder {
            let members = self.zpool.get(rid).expect("placed remainder").members.clone();
            self.register(rid, members, info.level, ExtentTier::Zpool);
            return Ok(Some(rid));
        }
        Ok(ex.remainder.as_ref().map(|r| r.id))
    }

    fn register(&mut self, id: ExtentId, members: Vec<PageId>, level: HotnessLevel, tier: ExtentTier) {
        for m in &members {
            self.pages.insert(*m, Tier::Compressed(id));
        }
        self.compressed_pages += members.len();
        self.extents.insert(id, ExtentInfo { members, level, tier });
    }

    fn make_resident(&mut self, id: PageId, data: PageData) {
        self.pages.insert(id, Tier::Resident(data));
        self.resident += 1;
        self.hot.set_resident(id, true).expect("known page");
        self.bump_lru(id);
    }

    /// Puts an in-flight extent into the zpool, moving the coldest zpool
    /// extents to swap as needed, or straight into swap when the zpool
    /// cannot take it. Registers the extent on success.
    fn place(
        &mut self,
        seq: u64,
        mut extent: CompressedExtent,
        charge: &mut Charge,
    ) -> Result<Result<Placed, CompressedExtent>, EngineError> {
        let id = extent.id;
        loop {
            match self.zpool.put(extent) {
                Ok(loc) => {
                    let e = self.zpool.get(id).expect("just placed");
                    let (members, level) = (e.members.clone(), e.level);
                    self.register(id, members, level, ExtentTier::Zpool);
                    let sector = match loc {
                        Location::Zpool { first_sector, .. } => first_sector,
                        _ => unreachable!("zpool placement"),
                    };
                    return Ok(Ok(Placed::Zpool { sector }));
                }
                Err((ZpoolError::Capacity { .. }, back)) => {
                    extent = back;
                    let victim = self.zpool.coldest().map(|(v, _)| v);
                    let Some(victim) = victim else { break };
                    let mut v = self.zpool.take(victim)?;
                    match self.swap_out(seq, &mut v, charge)? {
                        true => {
                            let info = self.extents.get_mut(&victim).expect("live extent");
                            let Location::Swap { slot } = v.location else {
                                unreachable!()
                            };
                            info.tier = ExtentTier::Swap(slot);
                        }
                        false => {
                            self.zpool.put(v).map_err(|(e, _)| e)?;
                            break;
                        }
                    }
                }
                Err((e, _)) => return Err(e.into()),
            }
        }
        if self.swap_out(seq, &mut extent, charge)? {
            let Location::Swap { slot } = extent.location else {
                unreachable!()
            };
            let (id, members, level) = (extent.id, extent.members.clone(), extent.level);
            self.register(id, members, level, ExtentTier::Swap(slot));
            return Ok(Ok(Placed::Swap));
        }
        Ok(Err(extent))
    }

    /// `false` when the device is full.
    fn swap_out(&mut self, seq: u64, extent: &mut CompressedExtent, charge: &mut Charge) -> Result<bool, EngineError> {
        match self.swap.swap_out(extent) {
            Ok(slot) => {
                self.counters.swap_out_ops += 1;
                self.counters.swap_out_bytes += slot.length;
                self.swapped_out_bytes += slot.length;
                charge.flash += self.cost.flash_write_ns(slot.length);
                let first = extent.members[0];
                self.log(
                    AuditRecord::new(seq, Action::SwapOut)
                        .page(first.uid, first.pfn)
                        .level(Some(extent.level))
                        .bytes(slot.length),
                );
                Ok(true)
            }
            Err(SwapError::Capacity { .. }) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    /// Places an extent whose pages have nowhere else to go; if neither the
    /// zpool nor swap can take it the pages become resident again.
    fn place_or_restore(&mut self, seq: u64, extent: CompressedExtent, charge: &mut Charge) -> Result<(), EngineError> {
        if let Err(extent) = self.place(seq, extent, charge)? {
            let level = extent.level;
            for (id, data) in extent.members.iter().zip(extent.decode()?) {
                self.make_resident(*id, data);
            }
            self.counters.oom_reports += 1;
            self.log(AuditRecord::new(seq, Action::Oom).level(Some(level)));
        }
        Ok(())
    }

    /// Decodes the first page of the extent that follows `addr` in the zpool
    /// (starting no later than the sector after `last_sector`) into the
    /// buffer. Background work: nothing is charged to a window.
    pub fn prefetch_next(
        &mut self,
        seq: u64,
        addr: u64,
        last_sector: u64,
        exclude: Option<ExtentId>,
    ) -> Result<PrefetchOutcome, EngineError> {
        self.logged(|e| e.prefetch_after(seq, addr, last_sector, exclude))
    }

    fn prefetch_after(
        &mut self,
        seq: u64,
        addr: u64,
        last_sector: u64,
        exclude: Option<ExtentId>,
    ) -> Result<PrefetchOutcome, EngineError> {
        let none = PrefetchOutcome {
            issued: false,
            page: None,
        };
        if self.cfg.scheme != Scheme::Ariadne || self.buffer.capacity() == 0 {
            return Ok(none);
        }
        let Some(next) = self.zpool.next_extent_after(addr, last_sector, exclude) else {
            return Ok(none);
        };
        let info = self.extents.remove(&next).expect("live extent");
        self.compressed_pages -= info.members.len();
        let first = info.members[0];
        let Location::Zpool {
            addr: n_addr,
            first_sector,
            last_sector: n_last,
        } = self.zpool.get(next).expect("zpool extent").location
        else {
            unreachable!("zpool extent has a zpool location")
        };
        let ex = self.zpool.extract(next, &[first], &mut self.ids)?;
        self.counters.prefetch_issued += 1;
        let mut bg = Charge::default();
        self.absorb_extraction(seq, &info, &ex, &mut bg)?;
        let decoded = ex.decoded_bytes;
        let Extraction { pages, remainder, .. } = ex;
        if let Some(r) = remainder {
            self.place_or_restore(seq, r, &mut bg)?;
        }
        let (_, data) = pages.into_iter().next().expect("first member decoded");
        self.pages.insert(first, Tier::Buffer);
        self.log(
            AuditRecord::new(seq, Action::Prefetch)
                .page(first.uid, first.pfn)
                .level(Some(info.level))
                .sector(Some(first_sector))
                .bytes(decoded)
                .ns(bg.decompress),
        );
        let evicted = self.buffer.push(Prefetched {
            id: first,
            data,
            addr: n_addr,
            last_sector: n_last,
        });
        if let Some(old) = evicted {
            self.counters.prefetch_wasted += 1;
            let level = self.hot.level(&old.id).unwrap_or(HotnessLevel::Cold);
            let extent = CompressedExtent::compress(
                self.ids.next_id(),
                &[(old.id, old.data)],
                self.cfg.chunk_for(level),
                level,
            );
            self.counters.record_compress(
                level,
                extent.chunks.len() as u64,
                extent.original_bytes(),
                extent.total_bytes(),
            );
            let ns = self
                .cost
                .compress_ns(extent.chunks.len() as u64, extent.original_bytes());
            let bytes = extent.total_bytes();
            self.log(
                AuditRecord::new(seq, Action::PrefetchWasted)
                    .page(old.id.uid, old.id.pfn)
                    .level(Some(level))
                    .bytes(bytes)
                    .ns(ns),
            );
            self.place_or_restore(seq, extent, &mut bg)?;
        }
        Ok(PrefetchOutcome {
            issued: true,
            page: Some(first),
        })
    }

    fn ensure_capacity(&mut self, seq: u64) -> Result<Charge, EngineError> {
        let free = self.avail_pages - self.resident as i64;
        if free >= self.low_pages {
            return Ok(Charge::default());
        }
        let needed = (self.high_pages - free) as usize;
        let mut charge = Charge::default();
        self.reclaim_pages(seq, needed, &mut charge)?;
        Ok(charge)
    }

    /// Compresses resident pages until `needed_bytes` (rounded up to pages)
    /// have left memory, or reports out-of-memory.
    pub fn reclaim(&mut self, seq: u64, needed_bytes: u64) -> Result<ReclaimReport, EngineError> {
        let mut charge = Charge::default();
        let pages = needed_bytes.div_ceil(PAGE_SIZE as u64) as usize;
        self.logged(|e| e.reclaim_pages(seq, pages, &mut charge))
    }

    fn reclaim_pages(&mut self, seq: u64, needed: usize, charge: &mut Charge) -> Result<ReclaimReport, EngineError> {
        self.counters.reclaim_invocations += 1;
        let victims: Vec<(PageId, HotnessLevel)> = match self.cfg.scheme {
            Scheme::Zram => self
                .lru
                .values()
                .take(needed)
                .map(|id| (*id, self.hot.level(id).unwrap_or(HotnessLevel::Cold)))
                .collect(),
            Scheme::Ariadne => self.hot.select_victims_from(needed, self.cfg.compressible_levels()),
        };
        // Consecutive victims of one app and level share an extent, up to
        // the level's page count.
        let mut groups: Vec<(HotnessLevel, Vec<PageId>)> = Vec::new();
        for (id, level) in victims {
            match groups.last_mut() {
                Some((l, g)) if *l == level && g[0].uid == id.uid && g.len() < self.cfg.pages_per_extent(level) => {
                    g.push(id)
                }
                _ => groups.push((level, vec![id])),
            }
        }
        let mut report = ReclaimReport::default();
        let mut oom = false;
        for (level, group) in groups {
            let pages: Vec<(PageId, PageData)> = group
                .iter()
                .map(|id| match &self.pages[id] {
                    Tier::Resident(d) => (*id, d.clone()),
                    _ => unreachable!("victims are resident"),
                })
                .collect();
            let extent = CompressedExtent::compress(self.ids.next_id(), &pages, self.cfg.chunk_for(level), level);
            let (ops, bytes_in, bytes_out) = (
                extent.chunks.len() as u64,
                extent.original_bytes(),
                extent.total_bytes(),
            );
            self.counters.record_compress(level, ops, bytes_in, bytes_out);
            let ns = self.cost.compress_ns(ops, bytes_in);
            charge.compress += ns;
            report.compress_ns += ns;
            let placed = match self.place(seq, extent, charge)? {
                Ok(p) => p,
                Err(_) => {
                    oom = true;
                    break;
                }
            };
            let sector = match placed {
                Placed::Zpool { sector } => Some(sector),
                Placed::Swap => None,
            };
            for (i, id) in group.iter().enumerate() {
                self.resident -= 1;
                self.hot.set_resident(*id, false).expect("known page");
                self.drop_lru(id);
                self.log(
                    AuditRecord::new(seq, Action::Compress)
                        .page(id.uid, id.pfn)
                        .level(Some(level))
                        .sector(sector)
                        .bytes(bytes_out)
                        .ns(if i == 0 { ns } else { 0.0 }),
                );
            }
            report.victims += group.len();
            report.extents_created += 1;
        }
        if oom || report.victims < needed {
            self.counters.oom_reports += 1;
            self.log(AuditRecord::new(seq, Action::Oom).bytes(((needed - report.victims) * PAGE_SIZE) as u64));
        }
        let remaining = self
            .cfg
            .compressible_levels()
            .iter()
            .copied()
            .find(|l| self.hot.resident_count(*l) > 0);
        self.log(
            AuditRecord::new(seq, Action::Reclaim)
                .level(remaining)
                .bytes((needed * PAGE_SIZE) as u64)
                .ns(report.compress_ns),
        );
        Ok(report)
    }

    /// Verifies that every page is in exactly one tier and that the zpool,
    /// swap device and extent table agree.
    pub fn check_conservation(&self) -> Result<(), String> {
        self.zpool.check_invariants()?;
        self.hot.check_invariants().map_err(|e| e.to_string())?;
        let (mut resident, mut buffered, mut compressed) = (0usize, 0usize, 0usize);
        for (id, tier) in &self.pages {
            match tier {
                Tier::Resident(_) => {
                    resident += 1;
                    if !self.hot.is_resident(id) {
                        return Err(format!("{id} resident but not in the resident index"));
                    }
                }
                Tier::Buffer => {
                    buffered += 1;
                    if !self.buffer.contains(id) || self.hot.is_resident(id) {
                        return Err(format!("{id} buffered inconsistently"));
                    }
                }
                Tier::Compressed(e) => {
                    compressed += 1;
                    let info = self
                        .extents
                        .get(e)
                        .ok_or_else(|| format!("{id} points at dead extent {e}"))?;
                    if !info.members.contains(id) || self.hot.is_resident(id) {
                        return Err(format!("{id} not a member of {e}"));
                    }
                }
            }
        }
        let members: usize = self.extents.values().map(|i| i.members.len()).sum();
        if resident != self.resident
            || buffered != self.buffer.len()
            || compressed != members
            || compressed != self.compressed_pages
        {
            return Err(format!(
                "tier counts: resident {resident}/{}, buffer {buffered}/{}, compressed {compressed}/{members}/{}",
                self.resident,
                self.buffer.len(),
                self.compressed_pages
            ));
        }
        let mut in_zpool = 0;
        let mut in_swap = 0;
        for (e, info) in &self.extents {
            match info.tier {
                ExtentTier::Zpool => {
                    in_zpool += 1;
                    let x = self.zpool.get(*e).ok_or_else(|| format!("{e} missing from zpool"))?;
                    if x.members != info.members {
                        return Err(format!("{e} members disagree"));
                    }
                }
                ExtentTier::Swap(slot) => {
                    in_swap += 1;
                    if !self.swap.contains(slot) {
                        return Err(format!("{e} slot {slot} not live"));
                    }
                }
            }
        }
        if in_zpool != self.zpool.len() || in_swap != self.swap.stats().live_slots as usize {
            return Err("extent table does not match zpool and swap contents".into());
        }
        if self.swap.stats().flash_write_bytes != self.swapped_out_bytes {
            return Err("flash writes differ from swapped-out extent bytes".into());
        }
        Ok(())
    }

    pub fn report(&self, trace_id: &str) -> Report {
        let cpu = cpu_cost(&self.counters, &self.cost);
        let totals = Totals {
            relaunches: self.reports.len() as u64,
            latency_ns: self.reports.iter().map(|r| r.latency_ns).sum(),
            pages_faulted: self.reports.iter().map(|r| r.pages_faulted).sum(),
            cpu,
            compression_ratio: compression_ratio(&self.counters),
            flash_write_bytes: self.swap.stats().flash_write_bytes,
            compressed_fraction: self.compressed_fraction(),
            compressed_fraction_peak: self.peak_fraction,
            oom_reports: self.counters.oom_reports,
        };
        Report {
            trace_id: trace_id.to_string(),
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
            cost_model: self.cost,
            counters: self.counters,
            relaunches: self.reports.clone(),
            totals,
            notes: vec![
                "cpu cost counts compression and decompression for every scheme".into(),
                "latency covers the memory path only: resident access, decode, flash reads and reclaim inside launch windows"
                    .into(),
                "prefetch decode is background work and not charged to any window".into(),
            ],
        }
    }
}

/// Output of [`replay`].
pub struct Replay {
    pub report: Report,
    pub audit: Vec<AuditRecord>,
}

/// Replays `events` under one configuration.
pub fn replay(events: &[TraceEvent], cfg: SchemeConfig, cost: CostModel, audit: bool) -> Result<Replay, EngineError> {
    let mut engine = Engine::new(cfg, cost)?.with_audit(audit);
    engine.run(events)?;
    let report = engine.report(&trace_id(events));
    Ok(Replay {
        report,
        audit: engine.take_audit(),
    })
}

#[cfg(test)]
mod tests;
