//! Audit records, one JSON object per line.
//!
//! Every record carries all of `seq, action, uid, pfn, level, sector, bytes,
//! ns`; fields that do not apply are `null`.
//!
//! | action            | meaning |
//! |-------------------|---------|
//! | `compress`        | one reclaim victim; `bytes` is its extent's stored size, `ns` is the extent's compress cost on the first member and 0 on the rest |
//! | `reclaim`         | end of a reclaim pass; `bytes` requested, `level` lowest level still resident and compressible |
//! | `oom`             | reclaim could not free what was asked |
//! | `fault`           | demand decode of a page from the zpool or swap; `ns` is the charge |
//! | `buffer_hit`      | demand access served from the pre-decompression buffer |
//! | `merge_back`      | unwanted extent members recompressed; `pfn` is the first of them |
//! | `swap_out`        | extent written to flash; `pfn` is its first member |
//! | `swap_in`         | extent read back from flash |
//! | `prefetch`        | page decoded into the buffer ahead of use |
//! | `prefetch_wasted` | buffered page evicted unused and recompressed |
//! | `hot_snapshot`    | one hot-list page at a launch begin; an empty list logs one record with `pfn` null |
//! | `demote`, `promote` | hot-list rotation at a relaunch end |
//! | `rotate`          | a launch window closed; `ns` is the window's modeled latency |

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::hotness::HotnessLevel;
use crate::trace::Uid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Compress,
    Reclaim,
    Oom,
    Fault,
    BufferHit,
    MergeBack,
    SwapOut,
    SwapIn,
    Prefetch,
    PrefetchWasted,
    HotSnapshot,
    Demote,
    Promote,
    Rotate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub action: Action,
    pub uid: Option<Uid>,
    pub pfn: Option<u64>,
    pub level: Option<HotnessLevel>,
    pub sector: Option<u64>,
    pub bytes: Option<u64>,
    pub ns: Option<f64>,
}

impl AuditRecord {
    pub fn new(seq: u64, action: Action) -> Self {
        Self {
            seq,
            action,
            uid: None,
            pfn: None,
            level: None,
            sector: None,
            bytes: None,
            ns: None,
        }
    }

    pub fn page(mut self, uid: Uid, pfn: u64) -> Self {
        self.uid = Some(uid);
        self.pfn = Some(pfn);
        self
    }

    pub fn level(mut self, level: Option<HotnessLevel>) -> Self {
        self.level = level;
        self
    }

    pub fn sector(mut self, sector: Option<u64>) -> Self {
        self.sector = sector;
        self
    }

    pub fn bytes(mut self, bytes: u64) -> Self {
        self.bytes = Some(bytes);
        self
    }

    pub fn ns(mut self, ns: f64) -> Self {
        self.ns = Some(ns);
        self
    }
}

pub fn write_audit_jsonl<W: Write>(records: &[AuditRecord], mut sink: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn read_audit_jsonl<R: std::io::BufRead>(source: R) -> Result<Vec<AuditRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_fields_present() {
        let r = AuditRecord::new(4, Action::BufferHit).page(1, 2);
        let mut out = Vec::new();
        write_audit_jsonl(std::slice::from_ref(&r), &mut out).unwrap();
        let line = String::from_utf8(out.clone()).unwrap();
        assert_eq!(
            line,
            "{\"seq\":4,\"action\":\"buffer_hit\",\"uid\":1,\"pfn\":2,\"level\":null,\"sector\":null,\"bytes\":null,\"ns\":null}\n"
        );
        assert_eq!(read_audit_jsonl(&out[..]).unwrap(), vec![r]);
    }
}
