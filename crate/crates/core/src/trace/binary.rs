//! Canonical binary trace format.
//!
//! ```text
//! header   "ASWP" | u16 version (=1) | u16 flags | u64 record count   (16 bytes)
//! record   u8 kind | u64 seq | fields | u16 payload len | payload | u32 crc32c
//! ```
//!
//! `kind` low bits select the record type (0 touch, 1 launch begin, 2 launch
//! end, 3 foreground); bit 7 is the touch write flag. Fields are
//! `uid:u32 pfn:u64` for touches, `uid:u32 launch:u32` for launch begin and
//! `uid:u32` otherwise. The payload length is 0 or 4096. The CRC covers every
//! byte of the record before it. All integers are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EventKind, PageData, PageId, TraceError, TraceEvent, PAGE_SIZE};

pub const MAGIC: [u8; 4] = *b"ASWP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

const KIND_TOUCH: u8 = 0;
const KIND_LAUNCH_BEGIN: u8 = 1;
const KIND_LAUNCH_END: u8 = 2;
const KIND_FOREGROUND: u8 = 3;
const WRITE_FLAG: u8 = 0x80;

/// Serialized size of one record.
pub fn record_len(ev: &TraceEvent) -> usize {
    let fields = match &ev.kind {
        EventKind::Touch { .. } => 12,
        EventKind::LaunchBegin { .. } => 8,
        EventKind::LaunchEnd { .. } | EventKind::Foreground { .. } => 4,
    };
    let payload = match &ev.kind {
        EventKind::Touch { payload: Some(_), .. } => PAGE_SIZE,
        _ => 0,
    };
    1 + 8 + fields + 2 + payload + 4
}

fn encode_record(ev: &TraceEvent, buf: &mut Vec<u8>) {
    buf.clear();
    let (kind, payload) = match &ev.kind {
        EventKind::Touch { payload, write, .. } => (KIND_TOUCH | if *write { WRITE_FLAG } else { 0 }, payload.as_ref()),
        EventKind::LaunchBegin { .. } => (KIND_LAUNCH_BEGIN, None),
        EventKind::LaunchEnd { .. } => (KIND_LAUNCH_END, None),
        EventKind::Foreground { .. } => (KIND_FOREGROUND, None),
    };
    buf.push(kind);
    buf.extend_from_slice(&ev.seq.to_le_bytes());
    match &ev.kind {
        EventKind::Touch { id, .. } => {
            buf.extend_from_slice(&id.uid.to_le_bytes());
            buf.extend_from_slice(&id.pfn.to_le_bytes());
        }
        EventKind::LaunchBegin { uid, launch } => {
            buf.extend_from_slice(&uid.to_le_bytes());
            buf.extend_from_slice(&launch.to_le_bytes());
        }
        EventKind::LaunchEnd { uid } | EventKind::Foreground { uid } => {
            buf.extend_from_slice(&uid.to_le_bytes());
        }
    }
    match payload {
        Some(p) => {
            buf.extend_from_slice(&(PAGE_SIZE as u16).to_le_bytes());
            buf.extend_from_slice(p.as_bytes());
        }
        None => buf.extend_from_slice(&0u16.to_le_bytes()),
    }
    let crc = crc32c::crc32c(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}

/// Writes `events` in the canonical format and returns the number of bytes
/// written.
pub fn write_trace<W: Write>(events: &[TraceEvent], mut sink: W) -> Result<u64, TraceError> {
    let mut offset = 0u64;
    let put = |sink: &mut W, bytes: &[u8], offset: &mut u64| -> Result<(), TraceError> {
        sink.write_all(bytes).map_err(|source| TraceError::Io {
            offset: *offset,
            source,
        })?;
        *offset += bytes.len() as u64;
        Ok(())
    };

    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&0u16.to_le_bytes());
    header[8..16].copy_from_slice(&(events.len() as u64).to_le_bytes());
    put(&mut sink, &header, &mut offset)?;

    let mut buf = Vec::with_capacity(64 + PAGE_SIZE);
    for ev in events {
        encode_record(ev, &mut buf);
        put(&mut sink, &buf, &mut offset)?;
    }
    sink.flush().map_err(|source| TraceError::Io { offset, source })?;
    Ok(offset)
}

pub fn write_trace_file(events: &[TraceEvent], path: &Path) -> Result<u64, TraceError> {
    let file = File::create(path).map_err(|source| TraceError::Io { offset: 0, source })?;
    write_trace(events, BufWriter::new(file))
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    /// Reads exactly `buf.len()` bytes. `Ok(false)` means clean EOF before the
    /// first byte; a partial read is a truncation.
    fn fill(&mut self, buf: &mut [u8], record: u64, what: &'static str) -> Result<bool, TraceError> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    if got == 0 {
                        return Ok(false);
                    }
                    return Err(TraceError::Truncated { record, detail: what });
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(TraceError::Io {
                        offset: self.offset + got as u64,
                        source,
                    })
                }
            }
        }
        self.offset += got as u64;
        Ok(true)
    }

    fn need(&mut self, buf: &mut [u8], record: u64, what: &'static str) -> Result<(), TraceError> {
        if self.fill(buf, record, what)? {
            Ok(())
        } else {
            Err(TraceError::Truncated { record, detail: what })
        }
    }
}

/// Reads a canonical trace, verifying the magic, version and every record
/// checksum.
pub fn read_trace<R: Read>(source: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut cur = Cursor {
        inner: source,
        offset: 0,
    };
    let mut header = [0u8; HEADER_LEN];
    cur.need(&mut header[..4], 0, "header")?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TraceError::BadMagic { found: magic });
    }
    cur.need(&mut header[4..], 0, "header")?;
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(TraceError::Version(version));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());

    let mut events = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut rec = Vec::with_capacity(64 + PAGE_SIZE);
    for record in 0..count {
        rec.clear();
        let mut head = [0u8; 9];
        cur.need(&mut head, record, "record header")?;
        rec.extend_from_slice(&head);
        let kind_byte = head[0];
        let seq = u64::from_le_bytes(head[1..9].try_into().unwrap());
        let kind = kind_byte & !WRITE_FLAG;
        let field_len = match kind {
            KIND_TOUCH => 12,
            KIND_LAUNCH_BEGIN => 8,
            KIND_LAUNCH_END | KIND_FOREGROUND => 4,
            other => {
                return Err(TraceError::Format {
                    record,
                    detail: format!("unknown record kind {other}"),
                })
            }
        };
        if kind != KIND_TOUCH && kind_byte & WRITE_FLAG != 0 {
            return Err(TraceError::Format {
                record,
                detail: "write flag on non-touch record".into(),
            });
        }
        let mut fields = [0u8; 12];
        cur.need(&mut fields[..field_len], record, "record fields")?;
        rec.extend_from_slice(&fields[..field_len]);
        let mut len = [0u8; 2];
        cur.need(&mut len, record, "payload length")?;
        rec.extend_from_slice(&len);
        let payload_len = u16::from_le_bytes(len) as usize;
        if payload_len != 0 && payload_len != PAGE_SIZE {
            return Err(TraceError::Format {
                record,
                detail: format!("payload length {payload_len}"),
            });
        }
        let start = rec.len();
        rec.resize(start + payload_len, 0);
        cur.need(&mut rec[start..], record, "payload")?;
        let mut crc = [0u8; 4];
        cur.need(&mut crc, record, "checksum")?;
        let stored = u32::from_le_bytes(crc);
        let computed = crc32c::crc32c(&rec);
        if stored != computed {
            return Err(TraceError::Corruption {
                record,
                stored,
                computed,
            });
        }

        let uid = u32::from_le_bytes(fields[0..4].try_into().unwrap());
        let kind = match kind {
            KIND_TOUCH => EventKind::Touch {
                id: PageId::new(uid, u64::from_le_bytes(fields[4..12].try_into().unwrap())),
                payload: if payload_len == PAGE_SIZE {
                    Some(PageData::new(rec[start..].to_vec())?)
                } else {
                    None
                },
                write: kind_byte & WRITE_FLAG != 0,
            },
            _ if payload_len != 0 => {
                return Err(TraceError::Format {
                    record,
                    detail: "payload on non-touch record".into(),
                })
            }
            KIND_LAUNCH_BEGIN => EventKind::LaunchBegin {
                uid,
                launch: u32::from_le_bytes(fields[4..8].try_into().unwrap()),
            },
            KIND_LAUNCH_END => EventKind::LaunchEnd { uid },
            _ => EventKind::Foreground { uid },
        };
        events.push(TraceEvent { seq, kind });
    }

    let mut extra = [0u8; 1];
    if cur.fill(&mut extra, count, "trailing")? {
        return Err(TraceError::Format {
            record: count,
            detail: "trailing bytes after last record".into(),
        });
    }
    Ok(events)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io { offset: 0, source })?;
    read_trace(BufReader::new(file))
}

struct CrcSink {
    crc: u32,
    len: u64,
}

impl Write for CrcSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.crc = crc32c::crc32c_append(self.crc, buf);
        self.len += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Content identifier of a trace: CRC32C and length of its canonical
/// encoding.
pub fn trace_id(events: &[TraceEvent]) -> String {
    let mut sink = CrcSink { crc: 0, len: 0 };
    write_trace(events, &mut sink).expect("in-memory sink cannot fail");
    format!("{:08x}-{}", sink.crc, sink.len)
}
