use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Snapshot of dirty bits for the pages `[base_page, base_page + len)`.
///
/// Bit `i` describes page `base_page + i`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DirtyBitvector {
    base_page: usize,
    len: usize,
    words: Vec<u64>,
}

impl DirtyBitvector {
    pub fn zeroed(base_page: usize, len: usize) -> Self {
        Self {
            base_page,
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    /// Builds a vector with the given absolute pages set. Pages outside the
    /// range are ignored.
    pub fn from_pages(base_page: usize, len: usize, pages: impl IntoIterator<Item = usize>) -> Self {
        let mut bv = Self::zeroed(base_page, len);
        for p in pages {
            if p >= base_page && p < base_page + len {
                bv.set(p - base_page);
            }
        }
        bv
    }

    pub fn base_page(&self) -> usize {
        self.base_page
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn end_page(&self) -> usize {
        self.base_page + self.len
    }

    /// Whether bit `i` (relative to the base page) is set.
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    /// Whether the absolute page `page` is set; false outside the range.
    pub fn contains_page(&self, page: usize) -> bool {
        page >= self.base_page && page < self.end_page() && self.get(page - self.base_page)
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn none(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Absolute page numbers whose bit is set, ascending.
    pub fn pages(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i)).map(move |i| self.base_page + i)
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }
}

impl fmt::Display for DirtyBitvector {
    /// One character per page, lowest page first: `01010000`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for DirtyBitvector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DirtyBitvector(@{} {})", self.base_page, self)
    }
}

/// Simulated cost counters for checking and clearing dirty bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirtyBitOps {
    pub get_calls: u64,
    pub clear_calls: u64,
    pub walk_steps: u64,
    pub bits_read: u64,
    pub bits_reset: u64,
    pub tlb_invalidations: u64,
}

impl DirtyBitOps {
    /// One simulated system call per get and per clear.
    pub fn syscalls(&self) -> u64 {
        self.get_calls + self.clear_calls
    }

    pub fn since(&self, earlier: &DirtyBitOps) -> DirtyBitOps {
        DirtyBitOps {
            get_calls: self.get_calls - earlier.get_calls,
            clear_calls: self.clear_calls - earlier.clear_calls,
            walk_steps: self.walk_steps - earlier.walk_steps,
            bits_read: self.bits_read - earlier.bits_read,
            bits_reset: self.bits_reset - earlier.bits_reset,
            tlb_invalidations: self.tlb_invalidations - earlier.tlb_invalidations,
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct OpCounters {
    get_calls: AtomicU64,
    clear_calls: AtomicU64,
    walk_steps: AtomicU64,
    bits_read: AtomicU64,
    bits_reset: AtomicU64,
    tlb_invalidations: AtomicU64,
}

impl OpCounters {
    pub(crate) fn record_get(&self, start: usize, end: usize) {
        self.get_calls.fetch_add(1, Ordering::Relaxed);
        self.walk_steps.fetch_add(walk_steps(start, end), Ordering::Relaxed);
        self.bits_read.fetch_add((end - start) as u64, Ordering::Relaxed);
    }

    pub(crate) fn record_clear(&self, start: usize, end: usize, cleared: u64) {
        self.clear_calls.fetch_add(1, Ordering::Relaxed);
        self.walk_steps.fetch_add(walk_steps(start, end), Ordering::Relaxed);
        self.bits_reset.fetch_add(cleared, Ordering::Relaxed);
        self.tlb_invalidations.fetch_add(cleared, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> DirtyBitOps {
        DirtyBitOps {
            get_calls: self.get_calls.load(Ordering::Relaxed),
            clear_calls: self.clear_calls.load(Ordering::Relaxed),
            walk_steps: self.walk_steps.load(Ordering::Relaxed),
            bits_read: self.bits_read.load(Ordering::Relaxed),
            bits_reset: self.bits_reset.load(Ordering::Relaxed),
            tlb_invalidations: self.tlb_invalidations.load(Ordering::Relaxed),
        }
    }
}

/// Entries per page-table node.
pub const PAGE_TABLE_FANOUT: u64 = 512;
/// Levels of the emulated page table (x86-64 style).
pub const PAGE_TABLE_LEVELS: u32 = 4;

/// Page-table nodes touched while walking the pages `[start, end)`: one
/// step per distinct 512-entry node at each level.
pub fn walk_steps(start: usize, end: usize) -> u64 {
    if end <= start {
        return 0;
    }
    let (start, last) = (start as u64, end as u64 - 1);
    (1..=PAGE_TABLE_LEVELS)
        .map(|level| {
            let span = PAGE_TABLE_FANOUT.pow(level);
            last / span - start / span + 1
        })
        .sum()
}

/// Packed per-page dirty bits with per-bit atomic set and conditional clear.
#[derive(Debug)]
pub(crate) struct DirtyBits {
    words: Box<[AtomicU64]>,
}

impl DirtyBits {
    pub(crate) fn new(num_pages: usize) -> Self {
        Self {
            words: (0..num_pages.div_ceil(64)).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub(crate) fn set(&self, page: usize) {
        self.words[page / 64].fetch_or(1 << (page % 64), Ordering::SeqCst);
    }

    pub(crate) fn is_set(&self, page: usize) -> bool {
        self.words[page / 64].load(Ordering::SeqCst) & (1 << (page % 64)) != 0
    }

    pub(crate) fn snapshot(&self, start: usize, end: usize) -> DirtyBitvector {
        let mut bv = DirtyBitvector::zeroed(start, end - start);
        for page in start..end {
            if self.is_set(page) {
                bv.set(page - start);
            }
        }
        bv
    }

    /// Clears bits in `[start, end)` that are set in `mask`; returns how many
    /// bits actually went from set to clear.
    pub(crate) fn clear_masked(&self, start: usize, end: usize, mask: &DirtyBitvector) -> u64 {
        let mut cleared = 0;
        let mut page = start;
        while page < end {
            let word = page / 64;
            let mut bits = 0u64;
            while page < end && page / 64 == word {
                if mask.contains_page(page) {
                    bits |= 1 << (page % 64);
                }
                page += 1;
            }
            if bits != 0 {
                let old = self.words[word].fetch_and(!bits, Ordering::SeqCst);
                cleared += (old & bits).count_ones() as u64;
            }
        }
        cleared
    }

    pub(crate) fn load_words(&self) -> Vec<u64> {
        self.words.iter().map(|w| w.load(Ordering::SeqCst)).collect()
    }

    pub(crate) fn store_words(&self, words: &[u64]) {
        for (w, &v) in self.words.iter().zip(words) {
            w.store(v, Ordering::SeqCst);
        }
    }
}
