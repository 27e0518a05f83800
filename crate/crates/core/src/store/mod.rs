//! Emulated direct-access paged store.
//!
//! Application stores go through [`PagedStore::write`], which updates the
//! page bytes and sets the page's dirty bit while holding that page's lock,
//! so a write and its dirty bit become visible together. The updater reads
//! and conditionally clears dirty bits in batches through
//! [`PagedStore::get_dirty_bits`] and [`PagedStore::clear_dirty_bits`];
//! every call is tallied in [`DirtyBitOps`].
//!
//! The `firmware_*` methods model faults below system software: they mutate
//! media without touching dirty bits.

mod dirty;
pub(crate) mod file;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dirty::{walk_steps, DirtyBitOps, DirtyBitvector, PAGE_TABLE_FANOUT, PAGE_TABLE_LEVELS};
pub(crate) use dirty::{DirtyBits, OpCounters};
pub use file::{STORE_MAGIC, STORE_VERSION};

pub const DEFAULT_PAGE_SIZE: usize = 4096;
pub const DEFAULT_CACHE_LINE: usize = 64;
pub const DEFAULT_BATCH_SIZE: usize = 512;
/// 64 MiB of 4 KiB pages.
pub const DEFAULT_NUM_PAGES: usize = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub page_size: usize,
    pub cache_line: usize,
    pub num_pages: usize,
    pub batch_size: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            page_size: DEFAULT_PAGE_SIZE,
            cache_line: DEFAULT_CACHE_LINE,
            num_pages: DEFAULT_NUM_PAGES,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl StoreConfig {
    /// Default page geometry with `num_pages` pages; the batch size is
    /// capped at the page count.
    pub fn with_pages(num_pages: usize) -> Self {
        Self {
            num_pages,
            batch_size: DEFAULT_BATCH_SIZE.min(num_pages.max(1)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.cache_line == 0 {
            return bad("cache_line must be positive".into());
        }
        if self.page_size == 0 || self.page_size % self.cache_line != 0 {
            return bad(format!(
                "page_size {} must be a positive multiple of cache_line {}",
                self.page_size, self.cache_line
            ));
        }
        if self.num_pages == 0 {
            return bad("num_pages must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.num_pages {
            return bad(format!(
                "batch_size {} must be in [1, num_pages = {}]",
                self.batch_size, self.num_pages
            ));
        }
        Ok(())
    }

    pub fn lines_per_page(&self) -> usize {
        self.page_size / self.cache_line
    }

    /// Number of `get_dirty_bits` calls needed to sweep every page once.
    pub fn batches_per_pass(&self) -> usize {
        self.num_pages.div_ceil(self.batch_size)
    }
}

/// One application write, as recorded in the optional write log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteRecord {
    pub page: usize,
    pub offset: usize,
    pub len: usize,
}

/// A write sitting in the emulated on-device write-back cache, together with
/// the media contents it replaced.
#[derive(Debug, Clone)]
struct StagedWrite {
    page: usize,
    offset: usize,
    pre_image: Vec<u8>,
}

pub struct PagedStore {
    config: StoreConfig,
    pages: Box<[RwLock<Box<[u8]>>]>,
    dirty: DirtyBits,
    counters: OpCounters,
    write_log: Option<Mutex<Vec<WriteRecord>>>,
    staged: Mutex<Vec<StagedWrite>>,
}

impl std::fmt::Debug for PagedStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PagedStore")
            .field("config", &self.config)
            .field("dirty_pages", &self.dirty_pages().len())
            .finish_non_exhaustive()
    }
}

impl PagedStore {
    /// A zero-filled store with every dirty bit clear.
    pub fn new(config: StoreConfig) -> Result<Self> {
        config.validate()?;
        let pages = (0..config.num_pages)
            .map(|_| RwLock::new(vec![0u8; config.page_size].into_boxed_slice()))
            .collect();
        Ok(Self {
            config,
            pages,
            dirty: DirtyBits::new(config.num_pages),
            counters: OpCounters::default(),
            write_log: None,
            staged: Mutex::new(Vec::new()),
        })
    }

    /// Like [`PagedStore::new`] but records every application write.
    pub fn with_write_log(config: StoreConfig) -> Result<Self> {
        let mut store = Self::new(config)?;
        store.write_log = Some(Mutex::new(Vec::new()));
        Ok(store)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn num_pages(&self) -> usize {
        self.config.num_pages
    }

    pub fn page_size(&self) -> usize {
        self.config.page_size
    }

    fn check_page(&self, page: usize) -> Result<()> {
        if page >= self.config.num_pages {
            return Err(Error::PageOutOfRange {
                page,
                num_pages: self.config.num_pages,
            });
        }
        Ok(())
    }

    fn check_access(&self, page: usize, offset: usize, len: usize) -> Result<()> {
        self.check_page(page)?;
        if offset.checked_add(len).is_none_or(|end| end > self.config.page_size) {
            return Err(Error::OutOfBounds {
                offset,
                len,
                page_size: self.config.page_size,
            });
        }
        Ok(())
    }

    fn check_write(&self, page: usize, offset: usize, len: usize) -> Result<()> {
        self.check_access(page, offset, len)?;
        let line = self.config.cache_line;
        if offset % line != 0 || len % line != 0 {
            return Err(Error::Misaligned {
                offset,
                len,
                cache_line: line,
            });
        }
        Ok(())
    }

    fn check_range(&self, start: usize, end: usize) -> Result<()> {
        if start >= end || end > self.config.num_pages || end - start > self.config.batch_size {
            return Err(Error::InvalidRange {
                start,
                end,
                num_pages: self.config.num_pages,
                batch_size: self.config.batch_size,
            });
        }
        Ok(())
    }

    /// Application store of `payload` at `offset` within `page`.
    pub fn write(&self, page: usize, offset: usize, payload: &[u8]) -> Result<()> {
        self.check_write(page, offset, payload.len())?;
        {
            let mut bytes = self.pages[page].write();
            bytes[offset..offset + payload.len()].copy_from_slice(payload);
            self.dirty.set(page);
        }
        if let Some(log) = &self.write_log {
            log.lock().push(WriteRecord {
                page,
                offset,
                len: payload.len(),
            });
        }
        Ok(())
    }

    /// Application load. Never touches dirty bits.
    pub fn read(&self, page: usize, offset: usize, len: usize) -> Result<Vec<u8>> {
        self.check_access(page, offset, len)?;
        Ok(self.pages[page].read()[offset..offset + len].to_vec())
    }

    pub fn read_page(&self, page: usize) -> Result<Vec<u8>> {
        self.check_page(page)?;
        Ok(self.pages[page].read().to_vec())
    }

    /// Runs `f` over a consistent snapshot of one page without copying it.
    pub fn with_page<R>(&self, page: usize, f: impl FnOnce(&[u8]) -> R) -> Result<R> {
        self.check_page(page)?;
        Ok(f(&self.pages[page].read()))
    }

    /// Snapshot of the dirty bits of `[start, end)`; one simulated syscall.
    ///
    /// Each bit is read atomically, the vector as a whole is not.
    pub fn get_dirty_bits(&self, start: usize, end: usize) -> Result<DirtyBitvector> {
        self.check_range(start, end)?;
        self.counters.record_get(start, end);
        Ok(self.dirty.snapshot(start, end))
    }

    /// Clears the dirty bit of each page in `[start, end)` whose bit is set
    /// in `mask`; pages outside the mask keep their bit. One simulated
    /// syscall plus one TLB invalidation per page actually cleared.
    pub fn clear_dirty_bits(&self, start: usize, end: usize, mask: &DirtyBitvector) -> Result<u64> {
        self.check_range(start, end)?;
        if mask.base_page() > start || mask.end_page() < end {
            return Err(Error::InvalidRange {
                start: mask.base_page(),
                end: mask.end_page(),
                num_pages: self.config.num_pages,
                batch_size: self.config.batch_size,
            });
        }
        let cleared = self.dirty.clear_masked(start, end, mask);
        self.counters.record_clear(start, end, cleared);
        Ok(cleared)
    }

    /// Uncounted probe of a single dirty bit.
    pub fn is_dirty(&self, page: usize) -> bool {
        self.dirty.is_set(page)
    }

    /// All dirty pages, ascending. Uncounted; meant for analysis.
    pub fn dirty_pages(&self) -> Vec<usize> {
        (0..self.config.num_pages).filter(|&p| self.dirty.is_set(p)).collect()
    }

    pub fn dirty_bit_ops(&self) -> DirtyBitOps {
        self.counters.snapshot()
    }

    pub fn write_log(&self) -> Vec<WriteRecord> {
        self.write_log.as_ref().map(|l| l.lock().clone()).unwrap_or_default()
    }

    /// An application write that lands in the device write-back cache: it is
    /// visible (and sets the dirty bit) like any write, but can still be lost
    /// by the firmware until it is destaged.
    pub fn stage_write(&self, page: usize, offset: usize, payload: &[u8]) -> Result<()> {
        self.check_write(page, offset, payload.len())?;
        let pre_image = self.pages[page].read()[offset..offset + payload.len()].to_vec();
        self.staged.lock().push(StagedWrite {
            page,
            offset,
            pre_image,
        });
        self.write(page, offset, payload)
    }

    pub fn has_staged(&self, page: usize) -> bool {
        self.staged.lock().iter().any(|s| s.page == page)
    }

    /// Firmware forgets to destage the pending writes for `page`: media
    /// reverts to the pre-write bytes and the dirty bit is left as it is.
    /// Returns false when nothing was staged.
    pub fn drop_staged(&self, page: usize) -> bool {
        let mut staged = self.staged.lock();
        let mut dropped = false;
        // Newest first so overlapping writes unwind correctly.
        for i in (0..staged.len()).rev() {
            if staged[i].page == page {
                let s = staged.remove(i);
                let mut bytes = self.pages[page].write();
                bytes[s.offset..s.offset + s.pre_image.len()].copy_from_slice(&s.pre_image);
                dropped = true;
            }
        }
        dropped
    }

    /// Every staged write reaches media.
    pub fn destage_all(&self) {
        self.staged.lock().clear();
    }

    /// Below-software mutation of media: no dirty bit, no write log.
    pub fn firmware_write(&self, page: usize, offset: usize, bytes: &[u8]) -> Result<()> {
        self.check_access(page, offset, bytes.len())?;
        self.pages[page].write()[offset..offset + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// An application store to `target` that the firmware lands on `aux`.
    /// The MMU still marks `target` dirty; `aux` changes silently.
    pub fn misdirect_write(&self, target: usize, aux: usize, offset: usize, payload: &[u8]) -> Result<()> {
        self.check_write(target, offset, payload.len())?;
        self.check_access(aux, offset, payload.len())?;
        if target == aux {
            return Err(Error::InvalidConfig("misdirected write needs distinct pages".into()));
        }
        // Lock in page order.
        let (lo, hi) = (target.min(aux), target.max(aux));
        let mut lo_guard = self.pages[lo].write();
        let mut hi_guard = self.pages[hi].write();
        let aux_bytes = if aux == lo { &mut lo_guard } else { &mut hi_guard };
        aux_bytes[offset..offset + payload.len()].copy_from_slice(payload);
        self.dirty.set(target);
        Ok(())
    }

    /// A load of `target` served from `aux`. Store contents are unchanged.
    pub fn misdirected_read(&self, target: usize, aux: usize, offset: usize, len: usize) -> Result<Vec<u8>> {
        self.check_access(target, offset, len)?;
        self.read(aux, offset, len)
    }

    /// Rewrites a whole page with reconstructed contents. Used by recovery,
    /// whose redundancy already matches, so the dirty bit is not set.
    pub fn restore_page(&self, page: usize, bytes: &[u8]) -> Result<()> {
        self.check_access(page, 0, bytes.len())?;
        if bytes.len() != self.config.page_size {
            return Err(Error::OutOfBounds {
                offset: 0,
                len: bytes.len(),
                page_size: self.config.page_size,
            });
        }
        self.pages[page].write().copy_from_slice(bytes);
        Ok(())
    }
}
