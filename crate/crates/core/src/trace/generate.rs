//! Synthetic relaunch workloads with controllable hot-set similarity, reuse
//! and sequential locality.
//!
//! Each app starts with `pages_per_app` pages. Launch 0 touches the initial
//! hot set and the following execution phase allocates the rest of that
//! footprint, then re-touches a warm sample of it. Every later relaunch
//! `k+1` keeps `similarity·h` pages of hot set `H_k` and takes the remainder
//! from pages used during the previous execution phase; the execution phase
//! after it re-touches `(reuse − similarity)·h` of the dropped pages (so they
//! label warm) and allocates `warm_fraction·pages_per_app` fresh pages, each
//! touched twice in a row. Pages
//! of the initial footprint that fall out of use stay cold. The relaunch
//! touch order is cut from the hot set's contiguous pfn runs so that the
//! fraction of `+1` successors matches `consecutive2`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EventKind, PageData, PageId, TraceError, TraceEvent, Uid, PAGE_SIZE};

/// How page contents are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum PayloadModel {
    /// Uniformly random bytes (incompressible).
    Random,
    /// Mostly zero pages with a few short random runs.
    ZeroRuns,
    /// Pages assembled from a per-app dictionary of 32-byte records with
    /// sparse per-record mutations. A record recurs roughly every
    /// `repeat_period / 4` bytes, so redundancy grows with the window a
    /// compressor can see.
    TemplatedRedundant { repeat_period: usize },
}

impl Default for PayloadModel {
    fn default() -> Self {
        PayloadModel::TemplatedRedundant { repeat_period: 65536 }
    }
}

fn default_hot_fraction() -> f64 {
    0.2
}

fn default_warm_fraction() -> f64 {
    0.15
}

/// Missing fields take their default values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub app_count: u32,
    /// Initial anonymous footprint of each app, in pages.
    pub pages_per_app: u64,
    /// Relaunches after the first launch.
    pub relaunch_count: u32,
    pub hot_similarity: f64,
    pub reuse: f64,
    /// Target probability that the next relaunch touch is the `+1` pfn.
    pub consecutive2: f64,
    pub payload_model: PayloadModel,
    pub seed: u64,
    /// Relaunch working set as a fraction of the footprint.
    pub hot_fraction: f64,
    /// Pages allocated by each execution phase, as a fraction of the initial
    /// footprint.
    pub warm_fraction: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            app_count: 10,
            pages_per_app: 1024,
            relaunch_count: 5,
            hot_similarity: 0.7,
            reuse: 0.98,
            consecutive2: 0.8,
            payload_model: PayloadModel::default(),
            seed: 42,
            hot_fraction: default_hot_fraction(),
            warm_fraction: default_warm_fraction(),
        }
    }
}

impl GeneratorSpec {
    fn hot_pages(&self) -> usize {
        ((self.hot_fraction * self.pages_per_app as f64).round() as usize).max(1)
    }

    fn warm_pages(&self) -> usize {
        (self.warm_fraction * self.pages_per_app as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Spec(m));
        for (name, v) in [
            ("hot_similarity", self.hot_similarity),
            ("reuse", self.reuse),
            ("consecutive2", self.consecutive2),
            ("hot_fraction", self.hot_fraction),
            ("warm_fraction", self.warm_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.pages_per_app < 1 {
            return bad("pages_per_app must be at least 1".into());
        }
        if self.app_count < 1 {
            return bad("app_count must be at least 1".into());
        }
        if self.reuse + 1e-12 < self.hot_similarity {
            return bad(format!(
                "reuse {} < hot_similarity {}: every hot page kept across relaunches is \
                 also reused, so reuse cannot be below similarity",
                self.reuse, self.hot_similarity
            ));
        }
        if let PayloadModel::TemplatedRedundant { repeat_period } = self.payload_model {
            if repeat_period < 128 {
                return bad(format!("repeat_period {repeat_period} < 128"));
            }
        }
        let h = self.hot_pages();
        let kept = (self.hot_similarity * h as f64).round() as usize;
        let union = h + (h - kept.min(h));
        let need = union + self.warm_pages();
        if need as u64 > self.pages_per_app {
            return bad(format!(
                "footprint of {} pages cannot hold two hot sets plus warm pages ({need} needed)",
                self.pages_per_app
            ));
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic page-content synthesizer for one payload model.
#[derive(Debug, Clone)]
pub struct PayloadSource {
    model: PayloadModel,
    seed: u64,
}

impl PayloadSource {
    pub fn new(model: PayloadModel, seed: u64) -> Self {
        Self { model, seed }
    }

    fn page_rng(&self, uid: Uid, pfn: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(((uid as u64) << 40) ^ pfn)))
    }

    fn dictionary(&self, uid: Uid, records: usize) -> Vec<[u8; 32]> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ 0xd1c7 ^ ((uid as u64) << 32)));
        (0..records)
            .map(|_| {
                let mut r = [0u8; 32];
                rng.fill_bytes(&mut r[..16]);
                // Second half looks like a few small integer fields.
                for i in (16..32).step_by(4) {
                    r[i] = rng.gen_range(0..16);
                }
                r
            })
            .collect()
    }

    pub fn page(&self, uid: Uid, pfn: u64) -> PageData {
        self.page_with(uid, pfn, None)
    }

    fn page_with(&self, uid: Uid, pfn: u64, dict: Option<&[[u8; 32]]>) -> PageData {
        let mut rng = self.page_rng(uid, pfn);
        let mut buf = vec![0u8; PAGE_SIZE];
        match self.model {
            PayloadModel::Random => rng.fill_bytes(&mut buf),
            PayloadModel::ZeroRuns => {
                let runs = rng.gen_range(1..=4);
                for _ in 0..runs {
                    let len = rng.gen_range(16..=256);
                    let at = rng.gen_range(0..PAGE_SIZE - len);
                    rng.fill_bytes(&mut buf[at..at + len]);
                }
            }
            PayloadModel::TemplatedRedundant { repeat_period } => {
                let owned;
                let dict = match dict {
                    Some(d) => d,
                    None => {
                        owned = self.dictionary(uid, (repeat_period / 128).max(4));
                        &owned
                    }
                };
                for rec in buf.chunks_exact_mut(32) {
                    rec.copy_from_slice(&dict[rng.gen_range(0..dict.len())]);
                    if rng.gen_bool(0.25) {
                        let i = rng.gen_range(0..32);
                        rec[i] = rng.gen();
                    }
                }
            }
        }
        PageData::new(buf).expect("page-sized buffer")
    }

    /// Pages `0..n` of app `uid`.
    pub fn pages(&self, uid: Uid, n: u64) -> Vec<PageData> {
        let dict = match self.model {
            PayloadModel::TemplatedRedundant { repeat_period } => {
                Some(self.dictionary(uid, (repeat_period / 128).max(4)))
            }
            _ => None,
        };
        (0..n).map(|pfn| self.page_with(uid, pfn, dict.as_deref())).collect()
    }
}

/// A byte corpus of `bytes` (rounded up to whole pages) drawn from one app.
pub fn corpus(model: PayloadModel, seed: u64, bytes: usize) -> Vec<u8> {
    let pages = bytes.div_ceil(PAGE_SIZE) as u64;
    let src = PayloadSource::new(model, seed);
    let mut out = Vec::with_capacity(pages as usize * PAGE_SIZE);
    for p in src.pages(1, pages) {
        out.extend_from_slice(p.as_bytes());
    }
    out
}

/// Maximal runs of consecutive values in a sorted slice, as index ranges.
fn maximal_runs(sorted: &[u64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] != sorted[i - 1] + 1 {
            if i > start {
                runs.push((start, i));
            }
            start = i;
        }
    }
    runs
}

struct AppGen<'a> {
    uid: Uid,
    pages: u64,
    run_len: usize,
    rng: ChaCha8Rng,
    payload: &'a [PageData],
}

impl AppGen<'_> {
    /// Draws `count` pages from those with `available[pfn]`, as runs of
    /// about `run_len` consecutive pfns.
    fn sample_runs(&mut self, available: &mut [bool], count: usize) -> BTreeSet<u64> {
        let mut out = BTreeSet::new();
        let lo = (self.run_len / 2).max(1);
        let hi = (self.run_len * 3 / 2).max(lo);
        while out.len() < count {
            let mut start = None;
            for _ in 0..64 {
                let s = self.rng.gen_range(0..self.pages);
                if available[s as usize] {
                    start = Some(s);
                    break;
                }
            }
            let start = match start {
                Some(s) => s,
                None => {
                    let from = self.rng.gen_range(0..self.pages);
                    match (from..self.pages).chain(0..from).find(|p| available[*p as usize]) {
                        Some(s) => s,
                        None => break,
                    }
                }
            };
            let want = self.rng.gen_range(lo..=hi).min(count - out.len());
            let mut p = start;
            while out.len() < count && p < self.pages && available[p as usize] && p - start < want as u64 {
                available[p as usize] = false;
                out.insert(p);
                p += 1;
            }
        }
        out
    }

    /// `count` members of `set`, taken as whole maximal runs in random order
    /// with the last run trimmed.
    fn subset_runs(&mut self, set: &BTreeSet<u64>, count: usize) -> BTreeSet<u64> {
        let sorted: Vec<u64> = set.iter().copied().collect();
        let mut runs = maximal_runs(&sorted);
        runs.shuffle(&mut self.rng);
        let mut out = BTreeSet::new();
        for (a, b) in runs {
            if out.len() >= count {
                break;
            }
            let take = (b - a).min(count - out.len());
            out.extend(sorted[a..a + take].iter().copied());
        }
        out
    }

    /// Touch order for a relaunch window: runs cut into pieces so that the
    /// fraction of `+1` successors is `p2` (bounded by the set's structure),
    /// pieces shuffled.
    fn relaunch_order(&mut self, set: &BTreeSet<u64>, p2: f64) -> Vec<u64> {
        let sorted: Vec<u64> = set.iter().copied().collect();
        let n = sorted.len();
        if n <= 1 {
            return sorted;
        }
        let runs = maximal_runs(&sorted);
        let max_succ = n - runs.len();
        let target = ((p2 * (n - 1) as f64).round() as usize).min(max_succ);
        let cuts_needed = max_succ - target;
        let mut interior: Vec<usize> = (1..n).filter(|&i| sorted[i] == sorted[i - 1] + 1).collect();
        // Partial Fisher-Yates: the first `cuts_needed` entries are the cuts.
        for i in 0..cuts_needed {
            let j = self.rng.gen_range(i..interior.len());
            interior.swap(i, j);
        }
        let mut cut = vec![false; n];
        for &i in &interior[..cuts_needed] {
            cut[i] = true;
        }
        for &(a, _) in &runs {
            cut[a] = true;
        }
        let mut pieces: Vec<&[u64]> = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || cut[i] {
                pieces.push(&sorted[start..i]);
                start = i;
            }
        }
        pieces.shuffle(&mut self.rng);
        // Break accidental `+1` joins between pieces cut from one run.
        let joined = |a: &[u64], b: &[u64]| a[a.len() - 1] + 1 == b[0];
        for _ in 0..8 {
            let mut clean = true;
            for i in 0..pieces.len().saturating_sub(1) {
                if joined(pieces[i], pieces[i + 1]) {
                    clean = false;
                    let j = self.rng.gen_range(0..pieces.len());
                    pieces.swap(i + 1, j);
                }
            }
            if clean {
                break;
            }
        }
        pieces.concat()
    }

    /// Execution-phase order: maximal runs ascending, runs shuffled.
    fn execution_order(&mut self, set: &BTreeSet<u64>) -> Vec<u64> {
        let sorted: Vec<u64> = set.iter().copied().collect();
        let mut runs = maximal_runs(&sorted);
        runs.shuffle(&mut self.rng);
        runs.into_iter().flat_map(|(a, b)| sorted[a..b].to_vec()).collect()
    }

    fn touch(&self, out: &mut Vec<EventKind>, pfn: u64, first: &mut [bool]) {
        let payload = if first[pfn as usize] {
            first[pfn as usize] = false;
            Some(self.payload[pfn as usize].clone())
        } else {
            None
        };
        out.push(EventKind::Touch {
            id: PageId::new(self.uid, pfn),
            payload,
            write: false,
        });
    }
}

/// Generates a trace; a pure function of `spec`.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<TraceEvent>, TraceError> {
    spec.validate()?;
    let h = spec.hot_pages();
    let warm = spec.warm_pages();
    let kept_n = ((spec.hot_similarity * h as f64).round() as usize).min(h);
    let carry_n = (((spec.reuse - spec.hot_similarity) * h as f64).round() as usize).min(h - kept_n);
    let run_len = if spec.consecutive2 >= 0.999 {
        h
    } else {
        ((2.0 / (1.0 - spec.consecutive2)).ceil() as usize).clamp(8, h.max(8))
    };
    let p = spec.pages_per_app;
    let total = p + spec.relaunch_count as u64 * warm as u64;
    let source = PayloadSource::new(spec.payload_model, spec.seed);

    // Per-app event blocks: [launch 0 block, relaunch 1 block, ...].
    let mut blocks: Vec<Vec<Vec<EventKind>>> = Vec::with_capacity(spec.app_count as usize);
    for a in 0..spec.app_count {
        let uid = a + 1;
        let payload = source.pages(uid, total);
        let mut g = AppGen {
            uid,
            pages: p,
            run_len,
            rng: ChaCha8Rng::seed_from_u64(splitmix(spec.seed ^ (uid as u64).wrapping_mul(0x51ed))),
            payload: &payload,
        };
        let mut first = vec![true; total as usize];
        let mut app_blocks = Vec::with_capacity(spec.relaunch_count as usize + 1);

        let mut avail = vec![true; p as usize];
        let mut hot = g.sample_runs(&mut avail, h);
        let mut ev = vec![EventKind::Foreground { uid }, EventKind::LaunchBegin { uid, launch: 0 }];
        for pfn in g.relaunch_order(&hot, spec.consecutive2) {
            g.touch(&mut ev, pfn, &mut first);
        }
        ev.push(EventKind::LaunchEnd { uid });
        for pfn in 0..p {
            if first[pfn as usize] {
                g.touch(&mut ev, pfn, &mut first);
            }
        }
        let mut extras = g.sample_runs(&mut avail, warm);
        for pfn in g.execution_order(&extras) {
            g.touch(&mut ev, pfn, &mut first);
        }
        app_blocks.push(ev);

        for r in 1..=spec.relaunch_count {
            let kept = g.subset_runs(&hot, kept_n);
            let mut next: BTreeSet<u64> = kept;
            let from_warm = g.subset_runs(&extras, h - next.len());
            next.extend(from_warm);
            if next.len() < h {
                let mut avail: Vec<bool> = (0..p).map(|x| !hot.contains(&x) && !next.contains(&x)).collect();
                let more = g.sample_runs(&mut avail, h - next.len());
                next.extend(more);
            }
            let dropped: BTreeSet<u64> = hot.difference(&next).copied().collect();
            let carry = g.subset_runs(&dropped, carry_n);
            let fresh = p + (r as u64 - 1) * warm as u64;
            extras = (fresh..fresh + warm as u64).collect();

            let mut ev = vec![EventKind::Foreground { uid }, EventKind::LaunchBegin { uid, launch: r }];
            for pfn in g.relaunch_order(&next, spec.consecutive2) {
                g.touch(&mut ev, pfn, &mut first);
            }
            ev.push(EventKind::LaunchEnd { uid });
            let exec: BTreeSet<u64> = carry.union(&extras).copied().collect();
            for pfn in g.execution_order(&exec) {
                g.touch(&mut ev, pfn, &mut first);
                // Fresh pages are used right after allocation.
                if extras.contains(&pfn) {
                    g.touch(&mut ev, pfn, &mut first);
                }
            }
            app_blocks.push(ev);
            hot = next;
        }
        blocks.push(app_blocks);
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(splitmix(spec.seed ^ 0x0a0a));
    let mut kinds = Vec::new();
    for app in blocks.iter_mut() {
        kinds.append(&mut app[0]);
    }
    for r in 1..=spec.relaunch_count as usize {
        let mut apps: Vec<usize> = (0..blocks.len()).collect();
        apps.shuffle(&mut order_rng);
        for a in apps {
            kinds.append(&mut blocks[a][r]);
        }
    }
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| TraceEvent::new(i as u64, kind))
        .collect())
}
