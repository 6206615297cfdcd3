//! JSONL interchange: one event object per line with the fields
//! `seq, kind, uid, pfn, launch, write, payload` (payload base64, absent
//! fields `null`).

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{EventKind, PageData, PageId, TraceError, TraceEvent};

#[derive(Debug, Serialize, Deserialize)]
struct JsonEvent {
    seq: u64,
    kind: String,
    uid: u32,
    pfn: Option<u64>,
    launch: Option<u32>,
    write: Option<bool>,
    payload: Option<String>,
}

impl From<&TraceEvent> for JsonEvent {
    fn from(ev: &TraceEvent) -> Self {
        let mut out = JsonEvent {
            seq: ev.seq,
            kind: ev.kind.name().to_string(),
            uid: ev.kind.uid(),
            pfn: None,
            launch: None,
            write: None,
            payload: None,
        };
        match &ev.kind {
            EventKind::Touch { id, payload, write } => {
                out.pfn = Some(id.pfn);
                out.write = Some(*write);
                out.payload = payload.as_ref().map(|p| STANDARD.encode(p.as_bytes()));
            }
            EventKind::LaunchBegin { launch, .. } => out.launch = Some(*launch),
            EventKind::LaunchEnd { .. } | EventKind::Foreground { .. } => {}
        }
        out
    }
}

impl JsonEvent {
    fn into_event(self, line: usize) -> Result<TraceEvent, TraceError> {
        let err = |detail: String| TraceError::Jsonl { line, detail };
        let kind = match self.kind.as_str() {
            "touch" => {
                let pfn = self.pfn.ok_or_else(|| err("touch without pfn".into()))?;
                let payload = match self.payload {
                    Some(b64) => {
                        let bytes = STANDARD
                            .decode(b64.as_bytes())
                            .map_err(|e| err(format!("payload: {e}")))?;
                        Some(PageData::new(bytes).map_err(|e| err(e.to_string()))?)
                    }
                    None => None,
                };
                EventKind::Touch {
                    id: PageId::new(self.uid, pfn),
                    payload,
                    write: self.write.unwrap_or(false),
                }
            }
            "launch_begin" => EventKind::LaunchBegin {
                uid: self.uid,
                launch: self.launch.ok_or_else(|| err("launch_begin without launch".into()))?,
            },
            "launch_end" => EventKind::LaunchEnd { uid: self.uid },
            "foreground" => EventKind::Foreground { uid: self.uid },
            other => return Err(err(format!("unknown kind {other:?}"))),
        };
        Ok(TraceEvent { seq: self.seq, kind })
    }
}

pub fn export_jsonl<W: Write>(events: &[TraceEvent], mut sink: W) -> Result<(), TraceError> {
    let mut offset = 0u64;
    for ev in events {
        let mut line = serde_json::to_vec(&JsonEvent::from(ev)).expect("event serializes");
        line.push(b'\n');
        sink.write_all(&line)
            .map_err(|source| TraceError::Io { offset, source })?;
        offset += line.len() as u64;
    }
    sink.flush().map_err(|source| TraceError::Io { offset, source })
}

pub fn import_jsonl<R: BufRead>(source: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|source| TraceError::Io { offset: 0, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: JsonEvent = serde_json::from_str(&line).map_err(|e| TraceError::Jsonl {
            line: i + 1,
            detail: e.to_string(),
        })?;
        events.push(ev.into_event(i + 1)?);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_uses_exact_field_names() {
        let ev = TraceEvent::new(3, EventKind::LaunchBegin { uid: 4, launch: 2 });
        let mut out = Vec::new();
        export_jsonl(&[ev], &mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in ["seq", "kind", "uid", "pfn", "launch", "write", "payload"] {
            assert!(keys.contains(&k.to_string()), "missing {k}");
        }
        assert_eq!(v["kind"], "launch_begin");
        assert_eq!(v["launch"], 2);
    }

    #[test]
    fn unknown_kind_names_line() {
        let input = "{\"seq\":0,\"kind\":\"touch\",\"uid\":1,\"pfn\":1,\"launch\":null,\"write\":false,\"payload\":null}\n\
                     {\"seq\":1,\"kind\":\"bogus\",\"uid\":1,\"pfn\":null,\"launch\":null,\"write\":null,\"payload\":null}\n";
        match import_jsonl(input.as_bytes()) {
            Err(TraceError::Jsonl { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
