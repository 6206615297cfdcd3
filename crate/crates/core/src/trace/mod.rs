//! Replayable workload traces.
//!
//! A trace is a dense, seq-ordered list of [`TraceEvent`]s: page touches plus
//! explicit launch-window markers. Launch windows are what the hotness labels
//! (hot = touched inside window *k*, warm = touched between the end of window
//! *k* and the next launch) are computed from, so they are carried in the
//! format rather than inferred.
//!
//! Submodules provide the canonical binary format ([`binary`]), a JSONL
//! interchange format ([`jsonl`]) and the synthetic workload generator
//! ([`generate`]).

pub mod binary;
pub mod generate;
pub mod jsonl;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binary::{read_trace, read_trace_file, trace_id, write_trace, write_trace_file};
pub use generate::{generate, GeneratorSpec, PayloadModel};
pub use jsonl::{export_jsonl, import_jsonl};

/// Bytes in one anonymous page.
pub const PAGE_SIZE: usize = 4096;

/// Application identifier.
pub type Uid = u32;

/// Identity of one anonymous page. Stable across every tier transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageId {
    pub uid: Uid,
    pub pfn: u64,
}

impl PageId {
    pub const fn new(uid: Uid, pfn: u64) -> Self {
        Self { uid, pfn }
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:#x}", self.uid, self.pfn)
    }
}

/// Immutable, shareable contents of one page (always [`PAGE_SIZE`] bytes).
#[derive(Clone, PartialEq, Eq)]
pub struct PageData(Arc<[u8]>);

impl PageData {
    /// Wraps `bytes`, which must be exactly one page long.
    pub fn new(bytes: Vec<u8>) -> Result<Self, TraceError> {
        if bytes.len() != PAGE_SIZE {
            return Err(TraceError::PayloadLength(bytes.len()));
        }
        Ok(Self(bytes.into()))
    }

    pub fn zeroed() -> Self {
        Self(vec![0u8; PAGE_SIZE].into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl AsRef<[u8]> for PageData {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for PageData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nonzero = self.0.iter().filter(|b| **b != 0).count();
        write!(f, "PageData({nonzero} nonzero bytes)")
    }
}

/// A page together with its contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageRecord {
    pub id: PageId,
    pub payload: PageData,
}

/// What happened at one point of the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// A demand access. `payload` is present when the access defines the page
    /// contents (first touch or a write); `None` leaves the contents as they
    /// were, and a first touch without payload yields a zero page.
    Touch {
        id: PageId,
        payload: Option<PageData>,
        write: bool,
    },
    LaunchBegin {
        uid: Uid,
        launch: u32,
    },
    LaunchEnd {
        uid: Uid,
    },
    Foreground {
        uid: Uid,
    },
}

impl EventKind {
    pub fn uid(&self) -> Uid {
        match self {
            EventKind::Touch { id, .. } => id.uid,
            EventKind::LaunchBegin { uid, .. } | EventKind::LaunchEnd { uid } | EventKind::Foreground { uid } => *uid,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Touch { .. } => "touch",
            EventKind::LaunchBegin { .. } => "launch_begin",
            EventKind::LaunchEnd { .. } => "launch_end",
            EventKind::Foreground { .. } => "foreground",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn new(seq: u64, kind: EventKind) -> Self {
        Self { seq, kind }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"ASWP\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported trace version {0}")]
    Version(u16),
    #[error("record {record}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Corruption { record: u64, stored: u32, computed: u32 },
    #[error("record {record}: truncated ({detail})")]
    Truncated { record: u64, detail: &'static str },
    #[error("record {record}: {detail}")]
    Format { record: u64, detail: String },
    #[error("payload must be exactly 4096 bytes, got {0}")]
    PayloadLength(usize),
    #[error("jsonl line {line}: {detail}")]
    Jsonl { line: usize, detail: String },
    #[error("event {seq}: {detail}")]
    Malformed { seq: u64, detail: String },
    #[error("invalid generator spec: {0}")]
    Spec(String),
}

/// Linear scan for the ordering and launch-window invariants: dense strictly
/// increasing `seq`, and every `LaunchBegin(uid, k)` closed by a
/// `LaunchEnd(uid)` before the app's next `LaunchBegin`, with increasing
/// launch ordinals per app.
pub fn validate(events: &[TraceEvent]) -> Result<(), TraceError> {
    let mut open: HashMap<Uid, u32> = HashMap::new();
    let mut last_launch: HashMap<Uid, u32> = HashMap::new();
    for (i, ev) in events.iter().enumerate() {
        if i > 0 && ev.seq != events[i - 1].seq + 1 {
            return Err(TraceError::Malformed {
                seq: ev.seq,
                detail: format!("seq not dense after {}", events[i - 1].seq),
            });
        }
        match &ev.kind {
            EventKind::LaunchBegin { uid, launch } => {
                if let Some(k) = open.get(uid) {
                    return Err(TraceError::Malformed {
                        seq: ev.seq,
                        detail: format!("launch {launch} of uid {uid} begins while launch {k} is open"),
                    });
                }
                if let Some(prev) = last_launch.get(uid) {
                    if launch <= prev {
                        return Err(TraceError::Malformed {
                            seq: ev.seq,
                            detail: format!("launch ordinal {launch} of uid {uid} not after {prev}"),
                        });
                    }
                }
                open.insert(*uid, *launch);
                last_launch.insert(*uid, *launch);
            }
            EventKind::LaunchEnd { uid } => {
                if open.remove(uid).is_none() {
                    return Err(TraceError::Malformed {
                        seq: ev.seq,
                        detail: format!("launch end for uid {uid} without open launch"),
                    });
                }
            }
            EventKind::Touch { payload, .. } => {
                if let Some(p) = payload {
                    debug_assert_eq!(p.as_bytes().len(), PAGE_SIZE);
                }
            }
            EventKind::Foreground { .. } => {}
        }
    }
    if let Some((uid, k)) = open.iter().min() {
        return Err(TraceError::Malformed {
            seq: events.last().map(|e| e.seq).unwrap_or(0),
            detail: format!("launch {k} of uid {uid} never ends"),
        });
    }
    Ok(())
}

/// One launch window of one app, with the page sets used for ground-truth
/// hotness labels.
#[derive(Debug, Clone)]
pub struct LaunchWindow {
    pub uid: Uid,
    pub launch: u32,
    /// seq of the `LaunchBegin` event.
    pub begin: u64,
    /// seq of the matching `LaunchEnd` event.
    pub end: u64,
    /// seq of the app's next `LaunchBegin`, or `u64::MAX` for the last one.
    pub next_begin: u64,
    /// Distinct pages touched inside the window, first-touch order.
    pub hot: Vec<PageId>,
    /// Distinct pages touched after `end` and before `next_begin` that are
    /// not in `hot`, first-touch order.
    pub warm: Vec<PageId>,
    /// Touch stream (pfns, with repeats) inside the window.
    pub stream: Vec<u64>,
}

/// Per-app launch windows and first-appearance times, built in one pass.
#[derive(Debug, Clone, Default)]
pub struct TraceIndex {
    windows: BTreeMap<Uid, Vec<LaunchWindow>>,
    first_seen: HashMap<PageId, u64>,
}

impl TraceIndex {
    pub fn build(events: &[TraceEvent]) -> Self {
        let mut windows: BTreeMap<Uid, Vec<LaunchWindow>> = BTreeMap::new();
        let mut first_seen = HashMap::new();
        // Per uid: index of the window currently collecting hot (in window)
        // or warm (after window) touches.
        let mut in_window: HashMap<Uid, bool> = HashMap::new();
        let mut seen_hot: HashMap<Uid, HashSet<PageId>> = HashMap::new();
        let mut seen_warm: HashMap<Uid, HashSet<PageId>> = HashMap::new();

        for ev in events {
            match &ev.kind {
                EventKind::LaunchBegin { uid, launch } => {
                    let list = windows.entry(*uid).or_default();
                    if let Some(prev) = list.last_mut() {
                        prev.next_begin = ev.seq;
                    }
                    list.push(LaunchWindow {
                        uid: *uid,
                        launch: *launch,
                        begin: ev.seq,
                        end: u64::MAX,
                        next_begin: u64::MAX,
                        hot: Vec::new(),
                        warm: Vec::new(),
                        stream: Vec::new(),
                    });
                    in_window.insert(*uid, true);
                    seen_hot.insert(*uid, HashSet::new());
                    seen_warm.insert(*uid, HashSet::new());
                }
                EventKind::LaunchEnd { uid } => {
                    if let Some(w) = windows.get_mut(uid).and_then(|l| l.last_mut()) {
                        w.end = ev.seq;
                    }
                    in_window.insert(*uid, false);
                }
                EventKind::Touch { id, .. } => {
                    first_seen.entry(*id).or_insert(ev.seq);
                    let Some(w) = windows.get_mut(&id.uid).and_then(|l| l.last_mut()) else {
                        continue;
                    };
                    if in_window.get(&id.uid).copied().unwrap_or(false) {
                        w.stream.push(id.pfn);
                        if seen_hot.entry(id.uid).or_default().insert(*id) {
                            w.hot.push(*id);
                        }
                    } else {
                        let hot = seen_hot.entry(id.uid).or_default();
                        if !hot.contains(id) && seen_warm.entry(id.uid).or_default().insert(*id) {
                            w.warm.push(*id);
                        }
                    }
                }
                EventKind::Foreground { .. } => {}
            }
        }
        Self { windows, first_seen }
    }

    pub fn uids(&self) -> impl Iterator<Item = Uid> + '_ {
        self.windows.keys().copied()
    }

    pub fn windows(&self, uid: Uid) -> &[LaunchWindow] {
        self.windows.get(&uid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn window(&self, uid: Uid, launch: u32) -> Option<&LaunchWindow> {
        self.windows(uid).iter().find(|w| w.launch == launch)
    }

    /// The first launch window of `uid` that begins strictly after `seq`.
    pub fn next_window_after(&self, uid: Uid, seq: u64) -> Option<&LaunchWindow> {
        self.windows(uid).iter().find(|w| w.begin > seq)
    }

    pub fn first_seen(&self, id: &PageId) -> Option<u64> {
        self.first_seen.get(id).copied()
    }

    /// Pages of `uid` whose first touch precedes `seq`, in (pfn) order.
    pub fn pages_seen_before(&self, uid: Uid, seq: u64) -> Vec<PageId> {
        let mut v: Vec<PageId> = self
            .first_seen
            .iter()
            .filter(|(id, s)| id.uid == uid && **s < seq)
            .map(|(id, _)| *id)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn page_count(&self) -> usize {
        self.first_seen.len()
    }
}
