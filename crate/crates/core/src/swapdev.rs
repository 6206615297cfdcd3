//! Flash swap space for compressed extents, kept as an append-only log.
//!
//! Layout (little-endian):
//!
//! ```text
//! "ASWD" u16 version
//! record: u8 kind (1 put, 2 free) u64 slot u32 length u32 meta_len meta payload u32 crc32c
//! ```
//!
//! `length` is the stored extent size (chunk headers included) and equals the
//! payload length; free records carry no meta or payload. The slot index is
//! rebuilt by scanning the log on open. Space held by freed slots comes back
//! only through [`SwapDevice::compact`].

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{self, ChunkSizeClass, CodecError};
use crate::hotness::HotnessLevel;
use crate::trace::PageId;
use crate::zpool::{CompressedExtent, ExtentId, Location};

pub const MAGIC: [u8; 4] = *b"ASWD";
pub const VERSION: u16 = 1;
const HEADER_LEN: u64 = 6;
const KIND_PUT: u8 = 1;
const KIND_FREE: u8 = 2;
/// kind + slot + length + meta_len
const RECORD_HEAD: usize = 1 + 8 + 4 + 4;

#[derive(Debug, Error)]
pub enum SwapError {
    #[error("swap I/O error at byte {offset}: {source}")]
    Io { offset: u64, source: io::Error },
    #[error("not a swap file (magic {found:?})")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported swap file version {0}")]
    Version(u16),
    #[error("swap record at byte {offset} is corrupt: {detail}")]
    Corruption { offset: u64, detail: String },
    #[error("swap device full: need {needed} bytes, {available} available")]
    Capacity { needed: u64, available: u64 },
    #[error("swap slot {0} is not live")]
    UnknownSlot(u64),
    #[error("extent {0} is not in flight")]
    NotInFlight(ExtentId),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// A live slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapSlot {
    pub slot: u64,
    pub length: u64,
    pub extent: ExtentId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapStats {
    pub swap_out_ops: u64,
    pub swap_in_ops: u64,
    pub flash_write_bytes: u64,
    pub flash_read_bytes: u64,
    pub live_slots: u64,
    pub live_bytes: u64,
    pub log_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    id: u64,
    chunk: ChunkSizeClass,
    level: HotnessLevel,
    members: Vec<(u32, u64)>,
}

#[derive(Debug)]
enum Backing {
    Memory(Vec<u8>),
    File { file: File, path: PathBuf },
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    /// Start of the put record.
    offset: u64,
    length: u64,
    extent: ExtentId,
}

#[derive(Debug)]
pub struct SwapDevice {
    backing: Backing,
    end: u64,
    index: BTreeMap<u64, Entry>,
    next_slot: u64,
    capacity: Option<u64>,
    live_bytes: u64,
    stats: SwapStats,
}

fn io_at(offset: u64) -> impl FnOnce(io::Error) -> SwapError {
    move |source| SwapError::Io { offset, source }
}

fn header() -> Vec<u8> {
    let mut h = MAGIC.to_vec();
    h.extend_from_slice(&VERSION.to_le_bytes());
    h
}

fn encode_record(kind: u8, slot: u64, length: u64, meta: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut r = Vec::with_capacity(RECORD_HEAD + meta.len() + payload.len() + 4);
    r.push(kind);
    r.extend_from_slice(&slot.to_le_bytes());
    r.extend_from_slice(&(length as u32).to_le_bytes());
    r.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    r.extend_from_slice(meta);
    r.extend_from_slice(payload);
    let crc = crc32c::crc32c(&r);
    r.extend_from_slice(&crc.to_le_bytes());
    r
}

struct Parsed<'a> {
    kind: u8,
    slot: u64,
    length: u64,
    meta: &'a [u8],
    payload: &'a [u8],
}

/// Parses one record from the front of `buf`; `offset` is its file position.
fn parse_record(buf: &[u8], offset: u64) -> Result<(Parsed<'_>, usize), SwapError> {
    let corrupt = |detail: &str| SwapError::Corruption {
        offset,
        detail: detail.to_string(),
    };
    let head = buf
        .get(..RECORD_HEAD)
        .ok_or_else(|| corrupt("truncated record header"))?;
    let kind = head[0];
    let slot = u64::from_le_bytes(head[1..9].try_into().unwrap());
    let length = u32::from_le_bytes(head[9..13].try_into().unwrap()) as u64;
    let meta_len = u32::from_le_bytes(head[13..17].try_into().unwrap()) as usize;
    let payload_len = match kind {
        KIND_PUT => length as usize,
        KIND_FREE => 0,
        _ => return Err(corrupt("unknown record kind")),
    };
    let body_end = RECORD_HEAD + meta_len + payload_len;
    let crc_bytes = buf
        .get(body_end..body_end + 4)
        .ok_or_else(|| corrupt("truncated record"))?;
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32c::crc32c(&buf[..body_end]) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    Ok((
        Parsed {
            kind,
            slot,
            length,
            meta: &buf[RECORD_HEAD..RECORD_HEAD + meta_len],
            payload: &buf[RECORD_HEAD + meta_len..body_end],
        },
        body_end + 4,
    ))
}

fn extent_from(p: &Parsed<'_>, offset: u64) -> Result<CompressedExtent, SwapError> {
    let meta: Meta = serde_json::from_slice(p.meta).map_err(|e| SwapError::Corruption {
        offset,
        detail: format!("meta: {e}"),
    })?;
    let chunks = compressor::decode_chunks(p.payload)?;
    Ok(CompressedExtent {
        id: ExtentId(meta.id),
        members: meta.members.into_iter().map(|(u, f)| PageId::new(u, f)).collect(),
        chunk: meta.chunk,
        chunks,
        level: meta.level,
        location: Location::InFlight,
    })
}

impl SwapDevice {
    /// A device held in memory. `capacity` bounds live bytes; `None` is
    /// unbounded.
    pub fn in_memory(capacity: Option<u64>) -> Self {
        let h = header();
        Self {
            end: h.len() as u64,
            backing: Backing::Memory(h),
            index: BTreeMap::new(),
            next_slot: 0,
            capacity,
            live_bytes: 0,
            stats: SwapStats::default(),
        }
    }

    /// Creates (truncating) a file-backed device.
    pub fn create(path: &Path, capacity: Option<u64>) -> Result<Self, SwapError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(io_at(0))?;
        file.write_all(&header()).map_err(io_at(0))?;
        Ok(Self {
            end: HEADER_LEN,
            backing: Backing::File {
                file,
                path: path.to_path_buf(),
            },
            index: BTreeMap::new(),
            next_slot: 0,
            capacity,
            live_bytes: 0,
            stats: SwapStats::default(),
        })
    }

    /// Opens an existing file and rebuilds the slot index from the log.
    pub fn open(path: &Path, capacity: Option<u64>) -> Result<Self, SwapError> {
        let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(io_at(0))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(io_at(0))?;
        if buf.len() < HEADER_LEN as usize {
            return Err(SwapError::Corruption {
                offset: 0,
                detail: "truncated header".into(),
            });
        }
        let found: [u8; 4] = buf[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(SwapError::BadMagic { found });
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(SwapError::Version(version));
        }
        let mut dev = Self {
            end: buf.len() as u64,
            backing: Backing::File {
                file,
                path: path.to_path_buf(),
            },
            index: BTreeMap::new(),
            next_slot: 0,
            capacity,
            live_bytes: 0,
            stats: SwapStats::default(),
        };
        let mut pos = HEADER_LEN as usize;
        while pos < buf.len() {
            let (rec, used) = parse_record(&buf[pos..], pos as u64)?;
            match rec.kind {
                KIND_PUT => {
                    let e = extent_from(&rec, pos as u64)?;
                    dev.index.insert(
                        rec.slot,
                        Entry {
                            offset: pos as u64,
                            length: rec.length,
                            extent: e.id,
                        },
                    );
                    dev.live_bytes += rec.length;
                }
                _ => {
                    if let Some(e) = dev.index.remove(&rec.slot) {
                        dev.live_bytes -= e.length;
                    }
                }
            }
            dev.next_slot = dev.next_slot.max(rec.slot + 1);
            pos += used;
        }
        Ok(dev)
    }

    fn append(&mut self, bytes: &[u8]) -> Result<u64, SwapError> {
        let at = self.end;
        match &mut self.backing {
            Backing::Memory(v) => v.extend_from_slice(bytes),
            Backing::File { file, .. } => {
                file.seek(SeekFrom::Start(at)).map_err(io_at(at))?;
                file.write_all(bytes).map_err(io_at(at))?;
            }
        }
        self.end += bytes.len() as u64;
        Ok(at)
    }

    fn read_at(&mut self, offset: u64, len: usize) -> Result<Vec<u8>, SwapError> {
        match &mut self.backing {
            Backing::Memory(v) => Ok(v[offset as usize..offset as usize + len].to_vec()),
            Backing::File { file, .. } => {
                let mut out = vec![0u8; len];
                file.seek(SeekFrom::Start(offset)).map_err(io_at(offset))?;
                file.read_exact(&mut out).map_err(io_at(offset))?;
                Ok(out)
            }
        }
    }

    pub fn capacity(&self) -> Option<u64> {
        self.capacity
    }

    pub fn stats(&self) -> SwapStats {
        SwapStats {
            live_slots: self.index.len() as u64,
            live_bytes: self.live_bytes,
            log_bytes: self.end,
            ..self.stats
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = SwapSlot> + '_ {
        self.index.iter().map(|(&slot, e)| SwapSlot {
            slot,
            length: e.length,
            extent: e.extent,
        })
    }

    pub fn contains(&self, slot: u64) -> bool {
        self.index.contains_key(&slot)
    }

    /// Persists an in-flight extent; only its compressed bytes are written.
    pub fn swap_out(&mut self, extent: &mut CompressedExtent) -> Result<SwapSlot, SwapError> {
        if extent.location != Location::InFlight {
            return Err(SwapError::NotInFlight(extent.id));
        }
        let length = extent.total_bytes();
        if let Some(cap) = self.capacity {
            let available = cap.saturating_sub(self.live_bytes);
            if length > available {
                return Err(SwapError::Capacity {
                    needed: length,
                    available,
                });
            }
        }
        let meta = serde_json::to_vec(&Meta {
            id: extent.id.0,
            chunk: extent.chunk,
            level: extent.level,
            members: extent.members.iter().map(|p| (p.uid, p.pfn)).collect(),
        })
        .expect("meta serializes");
        let mut payload = Vec::with_capacity(length as usize);
        compressor::encode_chunks(&extent.chunks, &mut payload);
        debug_assert_eq!(payload.len() as u64, length);
        let slot = self.next_slot;
        let offset = self.append(&encode_record(KIND_PUT, slot, length, &meta, &payload))?;
        self.next_slot += 1;
        self.index.insert(
            slot,
            Entry {
                offset,
                length,
                extent: extent.id,
            },
        );
        self.live_bytes += length;
        self.stats.swap_out_ops += 1;
        self.stats.flash_write_bytes += length;
        extent.location = Location::Swap { slot };
        Ok(SwapSlot {
            slot,
            length,
            extent: extent.id,
        })
    }

    fn load(&mut self, slot: u64) -> Result<(Entry, CompressedExtent), SwapError> {
        let entry = *self.index.get(&slot).ok_or(SwapError::UnknownSlot(slot))?;
        let head = self.read_at(entry.offset, RECORD_HEAD)?;
        let meta_len = u32::from_le_bytes(head[13..17].try_into().unwrap()) as usize;
        let total = RECORD_HEAD + meta_len + entry.length as usize + 4;
        let buf = self.read_at(entry.offset, total)?;
        let (rec, _) = parse_record(&buf, entry.offset)?;
        Ok((entry, extent_from(&rec, entry.offset)?))
    }

    /// Reads a slot without freeing it or counting the I/O.
    pub fn peek(&mut self, slot: u64) -> Result<CompressedExtent, SwapError> {
        self.load(slot).map(|(_, e)| e)
    }

    /// Reads a slot back, frees it and returns the extent in flight.
    pub fn swap_in(&mut self, slot: u64) -> Result<CompressedExtent, SwapError> {
        let (entry, extent) = self.load(slot)?;
        self.append(&encode_record(KIND_FREE, slot, 0, &[], &[]))?;
        self.index.remove(&slot);
        self.live_bytes -= entry.length;
        self.stats.swap_in_ops += 1;
        self.stats.flash_read_bytes += entry.length;
        Ok(extent)
    }

    pub fn flush(&mut self) -> Result<(), SwapError> {
        if let Backing::File { file, .. } = &mut self.backing {
            file.sync_data().map_err(io_at(self.end))?;
        }
        Ok(())
    }

    /// Rewrites the log with live slots only. Slot numbers are kept.
    pub fn compact(&mut self) -> Result<(), SwapError> {
        let mut out = header();
        let mut moved = BTreeMap::new();
        let slots: Vec<(u64, Entry)> = self.index.iter().map(|(&s, &e)| (s, e)).collect();
        for (slot, e) in slots {
            let head = self.read_at(e.offset, RECORD_HEAD)?;
            let meta_len = u32::from_le_bytes(head[13..17].try_into().unwrap()) as usize;
            let rec = self.read_at(e.offset, RECORD_HEAD + meta_len + e.length as usize + 4)?;
            moved.insert(
                slot,
                Entry {
                    offset: out.len() as u64,
                    ..e
                },
            );
            out.extend_from_slice(&rec);
        }
        match &mut self.backing {
            Backing::Memory(v) => *v = out.clone(),
            Backing::File { file, path } => {
                let tmp = path.with_extension("compact");
                std::fs::write(&tmp, &out).map_err(io_at(0))?;
                std::fs::rename(&tmp, &*path).map_err(io_at(0))?;
                *file = OpenOptions::new()
                    .read(true)
                    .write(true)
                    .open(&*path)
                    .map_err(io_at(0))?;
            }
        }
        self.end = out.len() as u64;
        self.index = moved;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PageData;
    use crate::zpool::ExtentIdGen;

    fn extent(ids: &mut ExtentIdGen, pages: u64) -> CompressedExtent {
        let data: Vec<_> = (0..pages)
            .map(|i| {
                let v: Vec<u8> = (0..4096).map(|b| ((b / 7) as u64 + i) as u8).collect();
                (PageId::new(2, 100 + i), PageData::new(v).unwrap())
            })
            .collect();
        let chunk = if pages > 1 {
            ChunkSizeClass::K16
        } else {
            ChunkSizeClass::K4
        };
        CompressedExtent::compress(ids.next_id(), &data, chunk, HotnessLevel::Cold)
    }

    #[test]
    fn writes_compressed_bytes_only() {
        let mut ids = ExtentIdGen::default();
        let mut dev = SwapDevice::in_memory(None);
        let mut e = extent(&mut ids, 4);
        let len = e.total_bytes();
        assert!(len < 4 * 4096);
        let slot = dev.swap_out(&mut e).unwrap();
        assert_eq!(slot.length, len);
        assert_eq!(dev.stats().flash_write_bytes, len);
        assert_eq!(e.location, Location::Swap { slot: slot.slot });
        let back = dev.swap_in(slot.slot).unwrap();
        e.location = Location::InFlight;
        assert_eq!(back, e);
        assert!(matches!(dev.swap_in(slot.slot), Err(SwapError::UnknownSlot(_))));
    }

    #[test]
    fn zero_capacity() {
        let mut ids = ExtentIdGen::default();
        let mut dev = SwapDevice::in_memory(Some(0));
        assert!(matches!(
            dev.swap_out(&mut extent(&mut ids, 1)),
            Err(SwapError::Capacity { .. })
        ));
    }

    #[test]
    fn read_bytes_match_write_bytes() {
        let mut ids = ExtentIdGen::default();
        let mut dev = SwapDevice::in_memory(None);
        let slots: Vec<_> = (0..100)
            .map(|i| dev.swap_out(&mut extent(&mut ids, 1 + i % 4)).unwrap().slot)
            .collect();
        for s in slots {
            dev.swap_in(s).unwrap();
        }
        let st = dev.stats();
        assert_eq!(st.flash_read_bytes, st.flash_write_bytes);
        assert_eq!(st.live_slots, 0);
    }

    #[test]
    fn reopen_and_compact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("swap.bin");
        let mut ids = ExtentIdGen::default();
        let mut kept = Vec::new();
        {
            let mut dev = SwapDevice::create(&path, None).unwrap();
            for i in 0..6 {
                let mut e = extent(&mut ids, 1 + i % 3);
                let s = dev.swap_out(&mut e).unwrap();
                e.location = Location::InFlight;
                kept.push((s.slot, e));
            }
            dev.swap_in(kept[1].0).unwrap();
            kept.remove(1);
            dev.flush().unwrap();
        }
        let mut dev = SwapDevice::open(&path, None).unwrap();
        assert_eq!(dev.stats().live_slots, 5);
        let before = dev.stats().log_bytes;
        dev.compact().unwrap();
        assert!(dev.stats().log_bytes < before);
        drop(dev);
        let mut dev = SwapDevice::open(&path, None).unwrap();
        for (slot, e) in kept {
            assert_eq!(dev.swap_in(slot).unwrap(), e);
        }
        // New slots never reuse old numbers.
        let s = dev.swap_out(&mut extent(&mut ids, 1)).unwrap();
        assert_eq!(s.slot, 6);
    }

    #[test]
    fn corrupt_log_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("swap.bin");
        let mut ids = ExtentIdGen::default();
        let mut dev = SwapDevice::create(&path, None).unwrap();
        dev.swap_out(&mut extent(&mut ids, 1)).unwrap();
        drop(dev);
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            SwapDevice::open(&path, None),
            Err(SwapError::Corruption { offset: 6, .. })
        ));
        std::fs::write(&path, b"NOPE\x01\x00").unwrap();
        assert!(matches!(SwapDevice::open(&path, None), Err(SwapError::BadMagic { .. })));
    }
}
