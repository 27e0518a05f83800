use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use crate::store::{DirtyBitvector, PagedStore};

/// Persistent shadow copy of the dirty bits of the batch being processed.
///
/// Only one batch is in flight at a time, so a single bitvector of batch
/// size plus the batch's first page is enough: pages outside the current
/// batch never have their dirty bits cleared early.
#[derive(Debug)]
pub struct ShadowState {
    bits: Box<[AtomicU64]>,
    batch_size: usize,
    batch_start: AtomicUsize,
}

impl ShadowState {
    pub fn new(batch_size: usize) -> Self {
        Self {
            bits: (0..batch_size.div_ceil(64)).map(|_| AtomicU64::new(0)).collect(),
            batch_size,
            batch_start: AtomicUsize::new(0),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batch_start(&self) -> usize {
        self.batch_start.load(Ordering::SeqCst)
    }

    /// Records `mask` as the shadow copy for the batch starting at its base
    /// page. Bits are written before the start page.
    pub fn persist(&self, mask: &DirtyBitvector) {
        assert!(mask.len() <= self.batch_size, "mask longer than the batch size");
        let words = mask.words();
        for (i, w) in self.bits.iter().enumerate() {
            w.store(words.get(i).copied().unwrap_or(0), Ordering::SeqCst);
        }
        self.batch_start.store(mask.base_page(), Ordering::SeqCst);
    }

    pub fn clear(&self) {
        for w in self.bits.iter() {
            w.store(0, Ordering::SeqCst);
        }
    }

    pub fn is_clear(&self) -> bool {
        self.bits.iter().all(|w| w.load(Ordering::SeqCst) == 0)
    }

    /// Whether `page` has its shadow bit set in the current batch.
    pub fn is_set_for(&self, page: usize) -> bool {
        let start = self.batch_start();
        if page < start || page >= start + self.batch_size {
            return false;
        }
        let i = page - start;
        self.bits[i / 64].load(Ordering::SeqCst) & (1 << (i % 64)) != 0
    }

    /// The persisted shadow bits, clipped to `num_pages`.
    pub fn snapshot(&self, num_pages: usize) -> DirtyBitvector {
        let start = self.batch_start().min(num_pages);
        let len = self.batch_size.min(num_pages - start);
        let words: Vec<u64> = self.bits.iter().map(|w| w.load(Ordering::SeqCst)).collect();
        let mut bv = DirtyBitvector::zeroed(start, len);
        for i in 0..len {
            if words[i / 64] & (1 << (i % 64)) != 0 {
                bv.set(i);
            }
        }
        bv
    }
}

/// True while the page's redundancy may be stale: its dirty bit is set, or
/// it is in the current batch with its shadow bit set.
///
/// The dirty bit is read first. If it reads clear because the updater just
/// cleared it, the shadow copy was made visible before that clear.
pub fn is_covered_pending(store: &PagedStore, shadow: &ShadowState, page: usize) -> bool {
    store.is_dirty(page) || shadow.is_set_for(page)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shadow_tracks_current_batch_only() {
        let sh = ShadowState::new(8);
        assert!(sh.is_clear());
        sh.persist(&DirtyBitvector::from_pages(8, 8, [9, 15]));
        assert!(sh.is_set_for(9) && sh.is_set_for(15));
        assert!(!sh.is_set_for(1) && !sh.is_set_for(10) && !sh.is_set_for(17));
        assert_eq!(sh.snapshot(100).pages().collect::<Vec<_>>(), vec![9, 15]);
        sh.clear();
        assert!(sh.is_clear() && !sh.is_set_for(9));
    }

    #[test]
    fn snapshot_clips_final_partial_batch() {
        let sh = ShadowState::new(8);
        sh.persist(&DirtyBitvector::from_pages(8, 2, [9]));
        let snap = sh.snapshot(10);
        assert_eq!((snap.base_page(), snap.len()), (8, 2));
        assert_eq!(snap.pages().collect::<Vec<_>>(), vec![9]);
    }
}
