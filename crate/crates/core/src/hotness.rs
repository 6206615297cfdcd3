//! Per-application hot/warm/cold lists and cross-application victim order.
//!
//! Every known page sits in exactly one list of its app. Lists are ordered by
//! a global monotone stamp (most recent first). A parallel index holds only
//! the resident pages of each list so victim selection never scans
//! compressed pages.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{PageId, TraceIndex, Uid};

/// Declared in eviction order: `Cold < Warm < Hot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HotnessLevel {
    Cold,
    Warm,
    Hot,
}

impl HotnessLevel {
    pub const ALL: [HotnessLevel; 3] = [HotnessLevel::Cold, HotnessLevel::Warm, HotnessLevel::Hot];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HotnessLevel::Cold => "cold",
            HotnessLevel::Warm => "warm",
            HotnessLevel::Hot => "hot",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HotnessError {
    #[error("uid {uid} has no open launch window")]
    NoOpenWindow { uid: Uid },
    #[error("uid {uid} already has an open launch window")]
    WindowOpen { uid: Uid },
    #[error("page {0} is not known")]
    UnknownPage(PageId),
    #[error("launch {launch} of uid {uid} is not in the trace")]
    NoSuchLaunch { uid: Uid, launch: u32 },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// What a single touch did to a page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub id: PageId,
    /// `None` for the first touch ever.
    pub from: Option<HotnessLevel>,
    pub to: HotnessLevel,
    pub in_window: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RotationSummary {
    pub demoted: usize,
    pub promoted: usize,
}

#[derive(Debug, Clone, Copy)]
struct PageState {
    level: HotnessLevel,
    stamp: u64,
    resident: bool,
}

#[derive(Debug, Clone)]
struct Window {
    launch: u32,
    first: bool,
    before: HashSet<u64>,
    touched: HashSet<u64>,
}

#[derive(Debug, Clone, Default)]
struct AppLists {
    /// stamp -> pfn, one map per level.
    lists: [BTreeMap<u64, u64>; 3],
    resident: [BTreeMap<u64, u64>; 3],
    hot_capacity: usize,
    last_relaunch: Option<u32>,
    launches: u32,
    window: Option<Window>,
    lru_stamp: u64,
}

/// The policy state for all apps.
#[derive(Debug, Clone)]
pub struct HotnessState {
    pages: HashMap<PageId, PageState>,
    apps: BTreeMap<Uid, AppLists>,
    /// stamp -> uid, oldest first.
    app_lru: BTreeMap<u64, Uid>,
    foreground: Option<Uid>,
    clock: u64,
    initial_hot_capacity: usize,
}

impl Default for HotnessState {
    fn default() -> Self {
        Self::new(usize::MAX)
    }
}

impl HotnessState {
    /// `initial_hot_capacity` bounds how many pages of an app's first launch
    /// window are admitted to its hot list.
    pub fn new(initial_hot_capacity: usize) -> Self {
        Self {
            pages: HashMap::new(),
            apps: BTreeMap::new(),
            app_lru: BTreeMap::new(),
            foreground: None,
            clock: 0,
            initial_hot_capacity,
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn app_mut(&mut self, uid: Uid) -> &mut AppLists {
        let cap = self.initial_hot_capacity;
        self.apps.entry(uid).or_insert_with(|| AppLists {
            hot_capacity: cap,
            ..AppLists::default()
        })
    }

    fn bump_app(&mut self, uid: Uid) {
        let stamp = self.tick();
        let app = self.app_mut(uid);
        let old = std::mem::replace(&mut app.lru_stamp, stamp);
        self.app_lru.remove(&old);
        self.app_lru.insert(stamp, uid);
    }

    /// Moves a page to the front of `to`.
    fn place(&mut self, id: PageId, to: HotnessLevel) {
        let stamp = self.tick();
        let prev = self.pages.get(&id).copied();
        let resident = prev.map(|p| p.resident).unwrap_or(true);
        let app = self.app_mut(id.uid);
        if let Some(p) = prev {
            app.lists[p.level.index()].remove(&p.stamp);
            if p.resident {
                app.resident[p.level.index()].remove(&p.stamp);
            }
        }
        app.lists[to.index()].insert(stamp, id.pfn);
        if resident {
            app.resident[to.index()].insert(stamp, id.pfn);
        }
        self.pages.insert(
            id,
            PageState {
                level: to,
                stamp,
                resident,
            },
        );
    }

    pub fn foreground(&self) -> Option<Uid> {
        self.foreground
    }

    pub fn set_foreground(&mut self, uid: Uid) {
        self.foreground = Some(uid);
        self.bump_app(uid);
    }

    pub fn level(&self, id: &PageId) -> Option<HotnessLevel> {
        self.pages.get(id).map(|p| p.level)
    }

    pub fn is_known(&self, id: &PageId) -> bool {
        self.pages.contains_key(id)
    }

    pub fn in_window(&self, uid: Uid) -> bool {
        self.apps.get(&uid).is_some_and(|a| a.window.is_some())
    }

    pub fn hot_capacity(&self, uid: Uid) -> Option<usize> {
        self.apps.get(&uid).map(|a| a.hot_capacity)
    }

    pub fn last_relaunch(&self, uid: Uid) -> Option<u32> {
        self.apps.get(&uid).and_then(|a| a.last_relaunch)
    }

    /// Applies a demand touch. Pages are created on first touch.
    pub fn touch(&mut self, id: PageId) -> Transition {
        self.bump_app(id.uid);
        let prev = self.pages.get(&id).map(|p| p.level);
        let app = self.app_mut(id.uid);
        let window = app.window.as_ref().map(|w| w.first);
        let hot_len = app.lists[HotnessLevel::Hot.index()].len();
        let cap = app.hot_capacity;
        let to = match (window, prev) {
            // Relaunch window: everything touched becomes hot.
            (Some(false), _) => HotnessLevel::Hot,
            // First launch: admit new pages to hot up to capacity.
            (Some(true), None) if hot_len < cap => HotnessLevel::Hot,
            (_, None) => HotnessLevel::Cold,
            (_, Some(HotnessLevel::Cold)) => HotnessLevel::Warm,
            (_, Some(level)) => level,
        };
        if let Some(w) = app.window.as_mut() {
            if !w.first {
                w.touched.insert(id.pfn);
            }
        }
        self.place(id, to);
        Transition {
            id,
            from: prev,
            to,
            in_window: window.is_some(),
        }
    }

    /// Opens a launch window and returns the hot list at that instant
    /// (most recent first).
    pub fn on_launch_begin(&mut self, uid: Uid, launch: u32) -> Result<Vec<PageId>, HotnessError> {
        if self.in_window(uid) {
            return Err(HotnessError::WindowOpen { uid });
        }
        let hot = self.list(uid, HotnessLevel::Hot);
        let app = self.app_mut(uid);
        let first = app.launches == 0;
        app.launches += 1;
        app.window = Some(Window {
            launch,
            first,
            before: hot.iter().map(|p| p.pfn).collect(),
            touched: HashSet::new(),
        });
        Ok(hot)
    }

    /// Closes the window. After a relaunch the hot list is exactly the set
    /// touched in the window and untouched former hot pages head the warm
    /// list; after a first launch the admitted pages stay hot.
    pub fn on_relaunch_end(&mut self, uid: Uid) -> Result<RotationSummary, HotnessError> {
        let app = self.apps.get_mut(&uid).ok_or(HotnessError::NoOpenWindow { uid })?;
        let w = app.window.take().ok_or(HotnessError::NoOpenWindow { uid })?;
        if w.first {
            let n = app.lists[HotnessLevel::Hot.index()].len();
            app.hot_capacity = n;
            return Ok(RotationSummary {
                demoted: 0,
                promoted: n,
            });
        }
        app.last_relaunch = Some(w.launch);
        app.hot_capacity = w.touched.len();
        // Oldest first so the demoted block keeps its relative order.
        let stale: Vec<u64> = app.lists[HotnessLevel::Hot.index()]
            .values()
            .copied()
            .filter(|pfn| !w.touched.contains(pfn))
            .collect();
        for &pfn in &stale {
            self.place(PageId::new(uid, pfn), HotnessLevel::Warm);
        }
        let promoted = w.touched.iter().filter(|p| !w.before.contains(p)).count();
        Ok(RotationSummary {
            demoted: stale.len(),
            promoted,
        })
    }

    pub fn set_resident(&mut self, id: PageId, resident: bool) -> Result<(), HotnessError> {
        let p = self.pages.get_mut(&id).ok_or(HotnessError::UnknownPage(id))?;
        if p.resident == resident {
            return Ok(());
        }
        p.resident = resident;
        let (level, stamp) = (p.level, p.stamp);
        let app = self.apps.get_mut(&id.uid).expect("page implies app");
        if resident {
            app.resident[level.index()].insert(stamp, id.pfn);
        } else {
            app.resident[level.index()].remove(&stamp);
        }
        Ok(())
    }

    pub fn is_resident(&self, id: &PageId) -> bool {
        self.pages.get(id).is_some_and(|p| p.resident)
    }

    /// One list of one app, most recent first.
    pub fn list(&self, uid: Uid, level: HotnessLevel) -> Vec<PageId> {
        self.apps
            .get(&uid)
            .map(|a| {
                a.lists[level.index()]
                    .values()
                    .rev()
                    .map(|&pfn| PageId::new(uid, pfn))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Resident page count of one level across all apps.
    pub fn resident_count(&self, level: HotnessLevel) -> usize {
        self.apps.values().map(|a| a.resident[level.index()].len()).sum()
    }

    /// App order for eviction: background apps least recently used first,
    /// the foreground app last.
    pub fn eviction_app_order(&self) -> Vec<Uid> {
        let mut order: Vec<Uid> = self
            .app_lru
            .values()
            .copied()
            .filter(|u| Some(*u) != self.foreground)
            .collect();
        if let Some(fg) = self.foreground {
            if self.apps.contains_key(&fg) {
                order.push(fg);
            }
        }
        order
    }

    pub fn select_victims(&self, needed: usize) -> Vec<(PageId, HotnessLevel)> {
        self.select_victims_from(needed, &HotnessLevel::ALL)
    }

    /// Resident victims drawn level by level (cold, warm, hot among
    /// `allowed`), apps in [`eviction_app_order`](Self::eviction_app_order),
    /// least recently used page first within an app.
    pub fn select_victims_from(&self, needed: usize, allowed: &[HotnessLevel]) -> Vec<(PageId, HotnessLevel)> {
        let mut out = Vec::with_capacity(needed.min(1 << 16));
        if needed == 0 {
            return out;
        }
        let order = self.eviction_app_order();
        for level in HotnessLevel::ALL {
            if !allowed.contains(&level) {
                continue;
            }
            for &uid in &order {
                let app = &self.apps[&uid];
                for &pfn in app.resident[level.index()].values() {
                    out.push((PageId::new(uid, pfn), level));
                    if out.len() == needed {
                        return out;
                    }
                }
            }
        }
        out
    }

    /// Verifies disjointness, totality and index consistency.
    pub fn check_invariants(&self) -> Result<(), HotnessError> {
        let bad = |s: String| Err(HotnessError::Invariant(s));
        let mut listed = 0;
        for (&uid, app) in &self.apps {
            for level in HotnessLevel::ALL {
                for (&stamp, &pfn) in &app.lists[level.index()] {
                    let id = PageId::new(uid, pfn);
                    match self.pages.get(&id) {
                        Some(p) if p.level == level && p.stamp == stamp => {}
                        _ => return bad(format!("{id} listed as {} but state disagrees", level.name())),
                    }
                    listed += 1;
                }
                for (&stamp, &pfn) in &app.resident[level.index()] {
                    let id = PageId::new(uid, pfn);
                    match self.pages.get(&id) {
                        Some(p) if p.level == level && p.stamp == stamp && p.resident => {}
                        _ => return bad(format!("{id} in resident index but state disagrees")),
                    }
                }
            }
        }
        if listed != self.pages.len() {
            return bad(format!("{} pages known but {listed} listed", self.pages.len()));
        }
        let resident = self.pages.values().filter(|p| p.resident).count();
        let indexed: usize = HotnessLevel::ALL.iter().map(|l| self.resident_count(*l)).sum();
        if resident != indexed {
            return bad(format!("{resident} resident pages but {indexed} indexed"));
        }
        if self.app_lru.len() != self.apps.len() {
            return bad("app LRU does not hold every app exactly once".into());
        }
        Ok(())
    }

    /// Debug dump: foreground, app LRU (oldest first) and every list as pfns,
    /// most recent first.
    pub fn snapshot(&self) -> serde_json::Value {
        let apps: Vec<serde_json::Value> = self
            .apps
            .iter()
            .map(|(&uid, app)| {
                let pfns = |l: HotnessLevel| -> Vec<u64> { app.lists[l.index()].values().rev().copied().collect() };
                serde_json::json!({
                    "uid": uid,
                    "hot_capacity": if app.hot_capacity == usize::MAX { None } else { Some(app.hot_capacity) },
                    "last_relaunch": app.last_relaunch,
                    "hot": pfns(HotnessLevel::Hot),
                    "warm": pfns(HotnessLevel::Warm),
                    "cold": pfns(HotnessLevel::Cold),
                })
            })
            .collect();
        serde_json::json!({
            "foreground": self.foreground,
            "app_lru": self.app_lru.values().collect::<Vec<_>>(),
            "apps": apps,
        })
    }
}

/// Oracle labels for launch `launch` of `uid`: pages touched in the window
/// are hot, pages first touched after it (before the next launch) are warm,
/// every other page seen before the window is cold.
pub fn label_ground_truth(
    index: &TraceIndex,
    uid: Uid,
    launch: u32,
) -> Result<BTreeMap<PageId, HotnessLevel>, HotnessError> {
    let w = index
        .window(uid, launch)
        .ok_or(HotnessError::NoSuchLaunch { uid, launch })?;
    let mut out: BTreeMap<PageId, HotnessLevel> = index
        .pages_seen_before(uid, w.begin)
        .into_iter()
        .map(|p| (p, HotnessLevel::Cold))
        .collect();
    for p in &w.warm {
        out.insert(*p, HotnessLevel::Warm);
    }
    for p in &w.hot {
        out.insert(*p, HotnessLevel::Hot);
    }
    Ok(out)
}
