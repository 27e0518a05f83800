//! Per-page checksums, per-stripe parity and the meta-checksum.
//!
//! Redundancy lives apart from the data pages. Stripe `s` covers data pages
//! `[s * d, s * d + d)` where `d` is [`StripeConfig::data_pages_per_stripe`];
//! the last stripe is padded with implicit zero pages.

mod crc32c;
mod file;
mod parity;
mod verify;

use std::ops::Range;
use std::sync::atomic::{AtomicI64, AtomicU32, AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::PagedStore;

pub use self::crc32c::{crc32c, crc32c_append};
pub use file::{REGION_MAGIC, REGION_VERSION};
pub use parity::{compute_parity, reconstruct, xor_into};
pub use verify::{verify_convergence, ConvergenceReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripeConfig {
    pub data_pages_per_stripe: usize,
}

impl Default for StripeConfig {
    fn default() -> Self {
        Self {
            data_pages_per_stripe: 4,
        }
    }
}

impl StripeConfig {
    pub fn new(data_pages_per_stripe: usize) -> Self {
        Self { data_pages_per_stripe }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_pages_per_stripe == 0 {
            return Err(Error::InvalidConfig("a stripe needs at least one data page".into()));
        }
        Ok(())
    }

    /// Data pages plus the parity page.
    pub fn pages_per_stripe(&self) -> usize {
        self.data_pages_per_stripe + 1
    }

    pub fn stripe_of(&self, page: usize) -> usize {
        page / self.data_pages_per_stripe
    }

    pub fn num_stripes(&self, num_pages: usize) -> usize {
        num_pages.div_ceil(self.data_pages_per_stripe)
    }

    /// Real data pages of `stripe` (padding excluded).
    pub fn data_pages(&self, stripe: usize, num_pages: usize) -> Range<usize> {
        let start = stripe * self.data_pages_per_stripe;
        start.min(num_pages)..(start + self.data_pages_per_stripe).min(num_pages)
    }
}

/// A stored page checksum and the number of times it has been written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChecksumEntry {
    pub generation: u32,
    pub crc: u32,
}

impl ChecksumEntry {
    fn pack(self) -> u64 {
        ((self.generation as u64) << 32) | self.crc as u64
    }

    fn unpack(v: u64) -> Self {
        Self {
            generation: (v >> 32) as u32,
            crc: v as u32,
        }
    }
}

pub struct RedundancyRegion {
    page_size: usize,
    num_pages: usize,
    stripes: StripeConfig,
    checksums: Box<[AtomicU64]>,
    parity: Box<[RwLock<Box<[u8]>>]>,
    meta: AtomicU32,
    // Remaining successful writes before a simulated device error; negative
    // means unlimited.
    write_budget: AtomicI64,
}

impl std::fmt::Debug for RedundancyRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RedundancyRegion")
            .field("page_size", &self.page_size)
            .field("num_pages", &self.num_pages)
            .field("stripes", &self.stripes)
            .field("meta", &self.meta_checksum())
            .finish_non_exhaustive()
    }
}

impl RedundancyRegion {
    fn empty(page_size: usize, num_pages: usize, stripes: StripeConfig) -> Result<Self> {
        stripes.validate()?;
        let n_stripes = stripes.num_stripes(num_pages);
        Ok(Self {
            page_size,
            num_pages,
            stripes,
            checksums: (0..num_pages).map(|_| AtomicU64::new(0)).collect(),
            parity: (0..n_stripes)
                .map(|_| RwLock::new(vec![0u8; page_size].into_boxed_slice()))
                .collect(),
            meta: AtomicU32::new(0),
            write_budget: AtomicI64::new(-1),
        })
    }

    /// Builds up-to-date redundancy for the current store contents.
    pub fn initialize(store: &PagedStore, stripes: StripeConfig) -> Result<Self> {
        let region = Self::empty(store.page_size(), store.num_pages(), stripes)?;
        for page in 0..store.num_pages() {
            region.checksum_page(store, page)?;
        }
        for stripe in 0..region.num_stripes() {
            region.recompute_parity(store, stripe)?;
        }
        region.refresh_meta()?;
        Ok(region)
    }

    pub fn stripes(&self) -> StripeConfig {
        self.stripes
    }

    pub fn num_stripes(&self) -> usize {
        self.parity.len()
    }

    pub fn num_pages(&self) -> usize {
        self.num_pages
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// Makes the `n+1`-th region write from now fail with
    /// [`Error::DeviceWrite`], and every write after it.
    pub fn fail_after_writes(&self, n: u64) {
        self.write_budget.store(n as i64, Ordering::SeqCst);
    }

    pub fn clear_write_failures(&self) {
        self.write_budget.store(-1, Ordering::SeqCst);
    }

    fn consume_write(&self, what: &'static str) -> Result<()> {
        let ok = self
            .write_budget
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| match b {
                b if b < 0 => Some(b),
                0 => None,
                b => Some(b - 1),
            })
            .is_ok();
        if ok {
            Ok(())
        } else {
            Err(Error::DeviceWrite(what))
        }
    }

    pub fn checksum(&self, page: usize) -> u32 {
        self.entry(page).crc
    }

    pub fn entry(&self, page: usize) -> ChecksumEntry {
        ChecksumEntry::unpack(self.checksums[page].load(Ordering::SeqCst))
    }

    /// Stores a page checksum and bumps its generation.
    pub fn write_checksum(&self, page: usize, crc: u32) -> Result<()> {
        self.consume_write("page checksum")?;
        let slot = &self.checksums[page];
        let mut cur = slot.load(Ordering::SeqCst);
        loop {
            let next = ChecksumEntry {
                generation: ChecksumEntry::unpack(cur).generation.wrapping_add(1),
                crc,
            }
            .pack();
            match slot.compare_exchange_weak(cur, next, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Ok(()),
                Err(v) => cur = v,
            }
        }
    }

    /// Checksums the page's current bytes and stores the result.
    pub fn checksum_page(&self, store: &PagedStore, page: usize) -> Result<u32> {
        let crc = store.with_page(page, crc32c)?;
        self.write_checksum(page, crc)?;
        Ok(crc)
    }

    pub fn parity_page(&self, stripe: usize) -> Vec<u8> {
        self.parity[stripe].read().to_vec()
    }

    pub fn write_parity(&self, stripe: usize, bytes: &[u8]) -> Result<()> {
        self.consume_write("parity page")?;
        self.parity[stripe].write().copy_from_slice(bytes);
        Ok(())
    }

    /// Recomputes a stripe's parity from fresh reads of all its data pages.
    pub fn recompute_parity(&self, store: &PagedStore, stripe: usize) -> Result<()> {
        let mut acc = vec![0u8; self.page_size];
        for page in self.stripes.data_pages(stripe, self.num_pages) {
            store.with_page(page, |bytes| xor_into(&mut acc, bytes))?;
        }
        self.write_parity(stripe, &acc)
    }

    /// The checksum array serialized little-endian in page order.
    pub fn checksum_bytes(&self) -> Vec<u8> {
        (0..self.num_pages).flat_map(|p| self.checksum(p).to_le_bytes()).collect()
    }

    /// CRC-32C over the serialized checksum array.
    pub fn compute_meta_checksum(&self) -> u32 {
        (0..self.num_pages).fold(0, |crc, p| crc32c_append(crc, &self.checksum(p).to_le_bytes()))
    }

    pub fn refresh_meta(&self) -> Result<u32> {
        let meta = self.compute_meta_checksum();
        self.consume_write("meta-checksum")?;
        self.meta.store(meta, Ordering::SeqCst);
        Ok(meta)
    }

    pub fn meta_checksum(&self) -> u32 {
        self.meta.load(Ordering::SeqCst)
    }

    pub fn meta_matches(&self) -> bool {
        self.compute_meta_checksum() == self.meta_checksum()
    }

    /// Below-software corruption of a stored checksum (no generation bump).
    pub fn corrupt_checksum(&self, page: usize, crc: u32) {
        let gen = self.entry(page).generation;
        self.checksums[page].store(ChecksumEntry { generation: gen, crc }.pack(), Ordering::SeqCst);
    }
}
