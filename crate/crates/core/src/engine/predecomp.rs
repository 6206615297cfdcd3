use std::collections::VecDeque;

use crate::trace::{PageData, PageId};

/// A page decoded ahead of use, with the zpool position it came from.
#[derive(Debug, Clone)]
pub struct Prefetched {
    pub id: PageId,
    pub data: PageData,
    pub addr: u64,
    pub last_sector: u64,
}

/// FIFO of pre-decompressed pages.
#[derive(Debug, Clone, Default)]
pub struct PredecompBuffer {
    capacity: usize,
    entries: VecDeque<Prefetched>,
}

impl PredecompBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &PageId) -> bool {
        self.entries.iter().any(|e| e.id == *id)
    }

    /// Adds an entry and returns the one pushed out when full.
    pub fn push(&mut self, entry: Prefetched) -> Option<Prefetched> {
        if self.capacity == 0 {
            return Some(entry);
        }
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        evicted
    }

    pub fn get(&self, id: &PageId) -> Option<&Prefetched> {
        self.entries.iter().find(|e| e.id == *id)
    }

    pub fn take(&mut self, id: &PageId) -> Option<Prefetched> {
        let i = self.entries.iter().position(|e| e.id == *id)?;
        self.entries.remove(i)
    }

    pub fn ids(&self) -> impl Iterator<Item = PageId> + '_ {
        self.entries.iter().map(|e| e.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(pfn: u64) -> Prefetched {
        Prefetched {
            id: PageId::new(1, pfn),
            data: PageData::zeroed(),
            addr: 0,
            last_sector: 0,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = PredecompBuffer::new(1);
        assert!(b.push(entry(1)).is_none());
        assert_eq!(b.push(entry(2)).unwrap().id.pfn, 1);
        assert!(b.contains(&PageId::new(1, 2)));
        assert_eq!(b.take(&PageId::new(1, 2)).unwrap().id.pfn, 2);
        assert!(b.is_empty());
    }

    #[test]
    fn zero_capacity_rejects() {
        let mut b = PredecompBuffer::new(0);
        assert_eq!(b.push(entry(3)).unwrap().id.pfn, 3);
        assert_eq!(b.len(), 0);
    }
}
