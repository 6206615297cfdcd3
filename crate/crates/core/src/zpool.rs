//! Compressed-extent store over a byte-addressed region of 4 KiB blocks.
//!
//! Allocation is first-fit by address over a coalescing free-gap map, so a
//! fresh extent larger than one block occupies consecutive sectors. When no
//! single gap is large enough but total free space is, the extent is laid
//! out over several gaps in address order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Bound, Range};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{self, ChunkSizeClass, CodecError, CompressedChunk};
use crate::hotness::HotnessLevel;
use crate::trace::{PageData, PageId, Uid, PAGE_SIZE};

pub const BLOCK_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExtentId(pub u64);

impl fmt::Display for ExtentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExtentIdGen(u64);

impl ExtentIdGen {
    pub fn next_id(&mut self) -> ExtentId {
        let id = ExtentId(self.0);
        self.0 += 1;
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    InFlight,
    Zpool {
        addr: u64,
        first_sector: u64,
        last_sector: u64,
    },
    Swap {
        slot: u64,
    },
}

/// One compression unit: the concatenated payloads of `members`, compressed
/// in chunks of `chunk`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedExtent {
    pub id: ExtentId,
    pub members: Vec<PageId>,
    pub chunk: ChunkSizeClass,
    pub chunks: Vec<CompressedChunk>,
    /// Hotness of the members when compressed.
    pub level: HotnessLevel,
    pub location: Location,
}

impl CompressedExtent {
    pub fn compress(id: ExtentId, pages: &[(PageId, PageData)], chunk: ChunkSizeClass, level: HotnessLevel) -> Self {
        assert!(!pages.is_empty(), "extent needs at least one page");
        let mut raw = Vec::with_capacity(pages.len() * PAGE_SIZE);
        for (_, p) in pages {
            raw.extend_from_slice(p.as_bytes());
        }
        Self {
            id,
            members: pages.iter().map(|(id, _)| *id).collect(),
            chunk,
            chunks: compressor::compress(&raw, chunk),
            level,
            location: Location::InFlight,
        }
    }

    /// Compressed bytes including chunk headers.
    pub fn total_bytes(&self) -> u64 {
        compressor::compressed_size(&self.chunks) as u64
    }

    pub fn original_bytes(&self) -> u64 {
        (self.members.len() * PAGE_SIZE) as u64
    }

    pub fn member_range(&self, i: usize) -> Range<usize> {
        i * PAGE_SIZE..(i + 1) * PAGE_SIZE
    }

    pub fn position(&self, id: &PageId) -> Option<usize> {
        self.members.iter().position(|m| m == id)
    }

    pub fn uid(&self) -> Uid {
        self.members[0].uid
    }

    /// Decodes every member page.
    pub fn decode(&self) -> Result<Vec<PageData>, CodecError> {
        let raw = compressor::decompress(&self.chunks)?;
        if raw.len() != self.members.len() * PAGE_SIZE {
            return Err(CodecError::Length {
                chunk: self.chunks.len().saturating_sub(1),
                got: raw.len(),
                expected: self.members.len() * PAGE_SIZE,
            });
        }
        Ok(raw
            .chunks_exact(PAGE_SIZE)
            .map(|p| PageData::new(p.to_vec()).expect("page-sized slice"))
            .collect())
    }
}

/// Result of decoding an extent for some of its pages.
#[derive(Debug, Clone)]
pub struct Extraction {
    /// Wanted pages in member order.
    pub pages: Vec<(PageId, PageData)>,
    /// Unwanted members recompressed with the original chunk class, still in
    /// flight.
    pub remainder: Option<CompressedExtent>,
    /// Set by [`Zpool::extract`] when the remainder was put back.
    pub placed_remainder: Option<(ExtentId, Location)>,
    pub decoded_bytes: u64,
    pub decoded_chunks: u64,
    /// 4096 per decoded page that was not wanted.
    pub waste_bytes: u64,
    pub recompressed_chunks: u64,
    pub recompressed_bytes_in: u64,
    pub recompressed_bytes_out: u64,
}

/// Whole-extent decode; unwanted members go into a fresh remainder extent.
pub fn split_extent(
    extent: CompressedExtent,
    wanted: &[PageId],
    ids: &mut ExtentIdGen,
) -> Result<Extraction, CodecError> {
    let decoded = extent.decode()?;
    let mut pages = Vec::new();
    let mut rest = Vec::new();
    for (id, data) in extent.members.iter().zip(decoded) {
        if wanted.contains(id) {
            pages.push((*id, data));
        } else {
            rest.push((*id, data));
        }
    }
    let mut out = Extraction {
        pages,
        remainder: None,
        placed_remainder: None,
        decoded_bytes: extent.original_bytes(),
        decoded_chunks: extent.chunks.len() as u64,
        waste_bytes: (rest.len() * PAGE_SIZE) as u64,
        recompressed_chunks: 0,
        recompressed_bytes_in: 0,
        recompressed_bytes_out: 0,
    };
    if !rest.is_empty() {
        let r = CompressedExtent::compress(ids.next_id(), &rest, extent.chunk, extent.level);
        out.recompressed_chunks = r.chunks.len() as u64;
        out.recompressed_bytes_in = r.original_bytes();
        out.recompressed_bytes_out = r.total_bytes();
        out.remainder = Some(r);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ZpoolError {
    #[error("zpool full: need {needed} bytes, {available} usable, short by {shortfall}")]
    Capacity {
        needed: u64,
        available: u64,
        shortfall: u64,
    },
    #[error("extent {0} is not in the zpool")]
    UnknownExtent(ExtentId),
    #[error("extent {0} is not in flight")]
    NotInFlight(ExtentId),
    #[error("zpool capacity {0} is not a multiple of 4096")]
    Misaligned(u64),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Whether blocks may hold extents of different apps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackingPolicy {
    #[default]
    Shared,
    PerApp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZpoolUsage {
    pub used_bytes: u64,
    pub free_bytes: u64,
    pub live_blocks: u64,
    /// Free bytes inside live blocks.
    pub slack_bytes: u64,
    pub fragmentation: f64,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    used: u64,
    occupants: u32,
    owner: Uid,
}

#[derive(Debug, Clone)]
struct Placed {
    extent: CompressedExtent,
    pieces: Vec<(u64, u64)>,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct Zpool {
    capacity: u64,
    policy: PackingPolicy,
    gaps: BTreeMap<u64, u64>,
    buckets: Vec<BTreeSet<u64>>,
    blocks: BTreeMap<u64, Block>,
    extents: HashMap<ExtentId, Placed>,
    /// Start address of each extent's first piece.
    starts: BTreeMap<u64, ExtentId>,
    /// Swap-out order: level, then put order.
    by_coldness: BTreeSet<(HotnessLevel, u64, ExtentId)>,
    used: u64,
    stamp: u64,
}

fn bucket(len: u64) -> usize {
    63 - len.leading_zeros() as usize
}

impl Zpool {
    pub fn new(capacity: u64, policy: PackingPolicy) -> Result<Self, ZpoolError> {
        if capacity % BLOCK_SIZE != 0 {
            return Err(ZpoolError::Misaligned(capacity));
        }
        let mut pool = Self {
            capacity,
            policy,
            gaps: BTreeMap::new(),
            buckets: vec![BTreeSet::new(); 64],
            blocks: BTreeMap::new(),
            extents: HashMap::new(),
            starts: BTreeMap::new(),
            by_coldness: BTreeSet::new(),
            used: 0,
            stamp: 0,
        };
        if capacity > 0 {
            pool.add_gap(0, capacity);
        }
        Ok(pool)
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn policy(&self) -> PackingPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.extents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extents.is_empty()
    }

    pub fn contains(&self, id: ExtentId) -> bool {
        self.extents.contains_key(&id)
    }

    pub fn get(&self, id: ExtentId) -> Option<&CompressedExtent> {
        self.extents.get(&id).map(|p| &p.extent)
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity - self.used
    }

    fn add_gap(&mut self, start: u64, len: u64) {
        self.gaps.insert(start, len);
        self.buckets[bucket(len)].insert(start);
    }

    fn take_gap(&mut self, start: u64) -> u64 {
        let len = self.gaps.remove(&start).expect("gap exists");
        self.buckets[bucket(len)].remove(&start);
        len
    }

    /// Returns `[start, start+len)` to the free map, merging neighbours.
    fn release(&mut self, mut start: u64, mut len: u64) {
        if let Some((&ps, &pl)) = self.gaps.range(..start).next_back() {
            if ps + pl == start {
                self.take_gap(ps);
                start = ps;
                len += pl;
            }
        }
        if self.gaps.contains_key(&(start + len)) {
            len += self.take_gap(start + len);
        }
        self.add_gap(start, len);
    }

    fn block_owned_by_other(&self, addr: u64, owner: Uid) -> bool {
        self.blocks
            .get(&(addr / BLOCK_SIZE))
            .is_some_and(|b| b.occupants > 0 && b.owner != owner)
    }

    /// The part of a gap an extent of `owner` may use.
    fn usable(&self, start: u64, len: u64, owner: Uid) -> Option<(u64, u64)> {
        let (mut a, mut e) = (start, start + len);
        if self.policy == PackingPolicy::PerApp {
            if self.block_owned_by_other(a, owner) {
                a = (a / BLOCK_SIZE + 1) * BLOCK_SIZE;
            }
            if e > a && self.block_owned_by_other(e - 1, owner) {
                e = (e - 1) / BLOCK_SIZE * BLOCK_SIZE;
            }
        }
        (e > a).then(|| (a, e - a))
    }

    fn first_fit(&self, len: u64, owner: Uid) -> Option<(u64, u64)> {
        let mut best: Option<(u64, u64)> = None;
        for b in bucket(len)..64 {
            for &start in &self.buckets[b] {
                if best.is_some_and(|(s, _)| s < start) {
                    break;
                }
                let glen = self.gaps[&start];
                if let Some((a, ul)) = self.usable(start, glen, owner) {
                    if ul >= len {
                        best = Some((start, a));
                        break;
                    }
                }
            }
        }
        best
    }

    fn carve(&mut self, gap_start: u64, addr: u64, len: u64) {
        let glen = self.take_gap(gap_start);
        if addr > gap_start {
            self.add_gap(gap_start, addr - gap_start);
        }
        let end = addr + len;
        if end < gap_start + glen {
            self.add_gap(end, gap_start + glen - end);
        }
    }

    fn occupy(&mut self, addr: u64, len: u64, owner: Uid, delta: i64) {
        let (first, last) = (addr / BLOCK_SIZE, (addr + len - 1) / BLOCK_SIZE);
        for s in first..=last {
            let lo = addr.max(s * BLOCK_SIZE);
            let hi = (addr + len).min((s + 1) * BLOCK_SIZE);
            if delta > 0 {
                let b = self.blocks.entry(s).or_insert(Block {
                    used: 0,
                    occupants: 0,
                    owner,
                });
                b.used += hi - lo;
                b.occupants += 1;
            } else {
                let b = self.blocks.get_mut(&s).expect("occupied block");
                b.used -= hi - lo;
                b.occupants -= 1;
                if b.occupants == 0 {
                    self.blocks.remove(&s);
                }
            }
        }
    }

    /// Places an in-flight extent and returns its new location. A rejected
    /// extent is handed back with the error.
    #[allow(clippy::result_large_err)]
    pub fn put(&mut self, mut extent: CompressedExtent) -> Result<Location, (ZpoolError, CompressedExtent)> {
        if extent.location != Location::InFlight {
            return Err((ZpoolError::NotInFlight(extent.id), extent));
        }
        let len = extent.total_bytes();
        let owner = extent.uid();
        let pieces = match self.first_fit(len, owner) {
            Some((gap, addr)) => {
                self.carve(gap, addr, len);
                vec![(addr, len)]
            }
            None => {
                let mut plan = Vec::new();
                let mut left = len;
                for (&start, &glen) in &self.gaps {
                    if let Some((a, ul)) = self.usable(start, glen, owner) {
                        let take = ul.min(left);
                        plan.push((start, a, take));
                        left -= take;
                        if left == 0 {
                            break;
                        }
                    }
                }
                if left > 0 {
                    let available = len - left;
                    return Err((
                        ZpoolError::Capacity {
                            needed: len,
                            available,
                            shortfall: left,
                        },
                        extent,
                    ));
                }
                for &(gap, addr, take) in &plan {
                    self.carve(gap, addr, take);
                }
                plan.into_iter().map(|(_, a, t)| (a, t)).collect()
            }
        };
        for &(a, l) in &pieces {
            self.occupy(a, l, owner, 1);
        }
        let (first_addr, _) = pieces[0];
        let (last_addr, last_len) = *pieces.last().unwrap();
        extent.location = Location::Zpool {
            addr: first_addr,
            first_sector: first_addr / BLOCK_SIZE,
            last_sector: (last_addr + last_len - 1) / BLOCK_SIZE,
        };
        let loc = extent.location;
        self.stamp += 1;
        self.used += len;
        self.starts.insert(first_addr, extent.id);
        self.by_coldness.insert((extent.level, self.stamp, extent.id));
        self.extents.insert(
            extent.id,
            Placed {
                extent,
                pieces,
                stamp: self.stamp,
            },
        );
        Ok(loc)
    }

    /// Removes an extent and returns it in flight.
    pub fn take(&mut self, id: ExtentId) -> Result<CompressedExtent, ZpoolError> {
        let placed = self.extents.remove(&id).ok_or(ZpoolError::UnknownExtent(id))?;
        let owner = placed.extent.uid();
        for &(a, l) in &placed.pieces {
            self.occupy(a, l, owner, -1);
            self.release(a, l);
        }
        self.starts.remove(&placed.pieces[0].0);
        self.by_coldness.remove(&(placed.extent.level, placed.stamp, id));
        let mut extent = placed.extent;
        self.used -= extent.total_bytes();
        extent.location = Location::InFlight;
        Ok(extent)
    }

    /// Frees an extent and returns the bytes released.
    pub fn remove(&mut self, id: ExtentId) -> Result<u64, ZpoolError> {
        self.take(id).map(|e| e.total_bytes())
    }

    /// Decodes the whole extent, returns the wanted pages and re-puts the
    /// rest as a remainder extent. A remainder that does not fit is left in
    /// `remainder` for the caller to place.
    pub fn extract(
        &mut self,
        id: ExtentId,
        wanted: &[PageId],
        ids: &mut ExtentIdGen,
    ) -> Result<Extraction, ZpoolError> {
        if !self.contains(id) {
            return Err(ZpoolError::UnknownExtent(id));
        }
        let extent = self.take(id)?;
        let mut ex = split_extent(extent, wanted, ids)?;
        if let Some(r) = ex.remainder.take() {
            let rid = r.id;
            match self.put(r) {
                Ok(loc) => ex.placed_remainder = Some((rid, loc)),
                Err((_, r)) => ex.remainder = Some(r),
            }
        }
        Ok(ex)
    }

    /// The extent with the lowest level, oldest first.
    pub fn coldest(&self) -> Option<(ExtentId, HotnessLevel)> {
        self.by_coldness.first().map(|&(l, _, id)| (id, l))
    }

    /// Extents in swap-out order.
    pub fn coldness_order(&self) -> impl Iterator<Item = ExtentId> + '_ {
        self.by_coldness.iter().map(|&(_, _, id)| id)
    }

    /// The extent starting after `addr` whose start sector is at most
    /// `last_sector + 1`, skipping `exclude`.
    pub fn next_extent_after(&self, addr: u64, last_sector: u64, exclude: Option<ExtentId>) -> Option<ExtentId> {
        self.starts
            .range((Bound::Excluded(addr), Bound::Unbounded))
            .map(|(&a, &id)| (a, id))
            .find(|(_, id)| Some(*id) != exclude)
            .filter(|(a, _)| a / BLOCK_SIZE <= last_sector + 1)
            .map(|(_, id)| id)
    }

    pub fn usage(&self) -> ZpoolUsage {
        let live = self.blocks.len() as u64;
        let span = live * BLOCK_SIZE;
        ZpoolUsage {
            used_bytes: self.used,
            free_bytes: self.capacity - self.used,
            live_blocks: live,
            slack_bytes: span - self.used,
            fragmentation: if live == 0 {
                0.0
            } else {
                1.0 - self.used as f64 / span as f64
            },
        }
    }

    /// Extents in address order.
    pub fn extents(&self) -> impl Iterator<Item = &CompressedExtent> + '_ {
        self.starts.values().map(|id| &self.extents[id].extent)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let live: u64 = self.extents.values().map(|p| p.extent.total_bytes()).sum();
        let pieces: u64 = self.extents.values().flat_map(|p| p.pieces.iter().map(|x| x.1)).sum();
        let occupied: u64 = self.blocks.values().map(|b| b.used).sum();
        let free: u64 = self.gaps.values().sum();
        if live != self.used || pieces != live || occupied != live {
            return Err(format!(
                "byte accounting: live {live}, used {}, pieces {pieces}, blocks {occupied}",
                self.used
            ));
        }
        if free + self.used != self.capacity {
            return Err(format!(
                "free {free} + used {} != capacity {}",
                self.used, self.capacity
            ));
        }
        let mut prev_end = None;
        for (&s, &l) in &self.gaps {
            if l == 0 || prev_end.is_some_and(|e| e >= s) {
                return Err(format!("gap map not coalesced at {s}"));
            }
            if !self.buckets[bucket(l)].contains(&s) {
                return Err(format!("gap {s} missing from size index"));
            }
            prev_end = Some(s + l);
        }
        if self.policy == PackingPolicy::PerApp {
            let mut owners: HashMap<u64, Uid> = HashMap::new();
            for p in self.extents.values() {
                for &(a, l) in &p.pieces {
                    for s in a / BLOCK_SIZE..=(a + l - 1) / BLOCK_SIZE {
                        if *owners.entry(s).or_insert(p.extent.uid()) != p.extent.uid() {
                            return Err(format!("sector {s} shared across apps"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Debug dump: live blocks with occupants, and the free map.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut occ: BTreeMap<u64, Vec<serde_json::Value>> = BTreeMap::new();
        for p in self.extents.values() {
            for &(a, l) in &p.pieces {
                for s in a / BLOCK_SIZE..=(a + l - 1) / BLOCK_SIZE {
                    let lo = a.max(s * BLOCK_SIZE);
                    let hi = (a + l).min((s + 1) * BLOCK_SIZE);
                    occ.entry(s).or_default().push(serde_json::json!({
                        "extent": p.extent.id.0,
                        "offset": lo - s * BLOCK_SIZE,
                        "length": hi - lo,
                    }));
                }
            }
        }
        for v in occ.values_mut() {
            v.sort_by_key(|o| o["offset"].as_u64());
        }
        let blocks: Vec<_> = self
            .blocks
            .iter()
            .map(|(&s, b)| {
                serde_json::json!({
                    "sector": s,
                    "free": BLOCK_SIZE - b.used,
                    "occupants": occ.remove(&s).unwrap_or_default(),
                })
            })
            .collect();
        serde_json::json!({
            "capacity": self.capacity,
            "used": self.used,
            "blocks": blocks,
            "free": self.gaps.iter().map(|(&s, &l)| [s, l]).collect::<Vec<_>>(),
        })
    }
}
