//! Background redundancy updater.
//!
//! One pass sweeps the store in batches of `B` pages. For each batch it
//! snapshots the dirty bits, persists the snapshot as the shadow copy,
//! clears exactly the snapshotted bits, recomputes the checksum of every
//! snapshotted page and the parity of every stripe holding one, and finally
//! clears the shadow copy. Two ordering points separate shadow persistence
//! from the clear, and redundancy writes from the shadow clear. The
//! meta-checksum is refreshed once per pass.
//!
//! [`PassCursor`] exposes the pass one durable step at a time so tests can
//! interleave it with writers and the scrubber, or abandon it mid-batch.

mod log;
mod periodic;
mod shadow;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::redundancy::RedundancyRegion;
use crate::store::{DirtyBitvector, PagedStore};

pub use log::{PersistEvent, PersistLog};
pub use periodic::{Clock, ManualClock, PeriodicUpdater, StopSignal, SystemClock, UpdaterConfig};
pub use shadow::{is_covered_pending, ShadowState};

/// Counters for one updater pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    pub batches: u64,
    pub dirty_pages_seen: u64,
    pub pages_checksummed: u64,
    pub stripes_reparitied: u64,
    /// The pass stopped early on request.
    pub aborted: bool,
}

impl PassStats {
    pub fn absorb(&mut self, other: &PassStats) {
        self.batches += other.batches;
        self.dirty_pages_seen += other.dirty_pages_seen;
        self.pages_checksummed += other.pages_checksummed;
        self.stripes_reparitied += other.stripes_reparitied;
        self.aborted |= other.aborted;
    }
}

/// One durable step of a pass, as returned by [`PassCursor::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassStep {
    CheckDirty { start: usize, end: usize },
    PersistShadow { start: usize },
    ClearDirty { start: usize, cleared: u64 },
    Checksum { page: usize },
    Parity { stripe: usize },
    ClearShadow { start: usize },
    MetaChecksum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Checksum(usize),
    Parity(usize),
}

#[derive(Debug)]
enum Phase {
    Check,
    Shadow(DirtyBitvector),
    Clear(DirtyBitvector),
    Redundancy(DirtyBitvector, VecDeque<Work>),
    Done,
}

/// An in-progress updater pass.
pub struct PassCursor<'a> {
    store: &'a PagedStore,
    region: &'a RedundancyRegion,
    shadow: &'a ShadowState,
    log: Option<&'a PersistLog>,
    stop: Option<&'a StopSignal>,
    next_batch: usize,
    phase: Phase,
    stats: PassStats,
}

impl<'a> PassCursor<'a> {
    pub fn new(store: &'a PagedStore, region: &'a RedundancyRegion, shadow: &'a ShadowState) -> Self {
        assert_eq!(
            shadow.batch_size(),
            store.config().batch_size,
            "shadow state and store disagree on batch size"
        );
        Self {
            store,
            region,
            shadow,
            log: None,
            stop: None,
            next_batch: 0,
            phase: Phase::Check,
            stats: PassStats::default(),
        }
    }

    pub fn with_log(mut self, log: &'a PersistLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Stop between batches once `stop` is raised.
    pub fn with_stop(mut self, stop: &'a StopSignal) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn stats(&self) -> PassStats {
        self.stats
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done)
    }

    fn record(&self, event: PersistEvent) {
        if let Some(log) = self.log {
            log.record(event);
        }
    }

    /// Work for one batch: every snapshotted page's checksum, then the
    /// parity of its stripe, stripe by stripe.
    fn plan(&self, mask: &DirtyBitvector) -> VecDeque<Work> {
        let stripes = self.region.stripes();
        let mut work = VecDeque::new();
        let mut current: Option<usize> = None;
        for page in mask.pages() {
            let stripe = stripes.stripe_of(page);
            if current.is_some_and(|s| s != stripe) {
                work.push_back(Work::Parity(current.unwrap()));
            }
            current = Some(stripe);
            work.push_back(Work::Checksum(page));
        }
        if let Some(s) = current {
            work.push_back(Work::Parity(s));
        }
        work
    }

    /// Performs the next step. `Ok(None)` once the pass is complete. An error
    /// ends the pass, leaving any persisted shadow bits in place.
    pub fn step(&mut self) -> Result<Option<PassStep>> {
        let result = self.step_inner();
        if result.is_err() {
            self.phase = Phase::Done;
        }
        result
    }

    fn step_inner(&mut self) -> Result<Option<PassStep>> {
        let phase = std::mem::replace(&mut self.phase, Phase::Done);
        let (next, step) = match phase {
            Phase::Check => {
                let n = self.store.num_pages();
                if self.next_batch >= n {
                    return self.step_meta();
                }
                if self.stop.is_some_and(|s| s.is_raised()) {
                    self.stats.aborted = true;
                    return self.step_meta();
                }
                let start = self.next_batch;
                let end = (start + self.store.config().batch_size).min(n);
                let mask = self.store.get_dirty_bits(start, end)?;
                self.stats.batches += 1;
                self.stats.dirty_pages_seen += mask.count_ones() as u64;
                (Phase::Shadow(mask), PassStep::CheckDirty { start, end })
            }
            Phase::Shadow(mask) => {
                self.shadow.persist(&mask);
                self.record(PersistEvent::ShadowPersisted {
                    batch_start: mask.base_page(),
                    pages: mask.count_ones(),
                });
                self.record(PersistEvent::OrderingPoint);
                let start = mask.base_page();
                (Phase::Clear(mask), PassStep::PersistShadow { start })
            }
            Phase::Clear(mask) => {
                let (start, end) = (mask.base_page(), mask.end_page());
                let cleared = self.store.clear_dirty_bits(start, end, &mask)?;
                self.record(PersistEvent::DirtyBitsCleared {
                    batch_start: start,
                    cleared,
                });
                let work = self.plan(&mask);
                (Phase::Redundancy(mask, work), PassStep::ClearDirty { start, cleared })
            }
            Phase::Redundancy(mask, mut work) => match work.pop_front() {
                None => return self.release(mask),
                Some(Work::Checksum(page)) => {
                    if let Err(e) = self.region.checksum_page(self.store, page) {
                        self.phase = Phase::Redundancy(mask, work);
                        return Err(e);
                    }
                    self.stats.pages_checksummed += 1;
                    self.record(PersistEvent::ChecksumWritten { page });
                    (Phase::Redundancy(mask, work), PassStep::Checksum { page })
                }
                Some(Work::Parity(stripe)) => {
                    if let Err(e) = self.region.recompute_parity(self.store, stripe) {
                        self.phase = Phase::Redundancy(mask, work);
                        return Err(e);
                    }
                    self.stats.stripes_reparitied += 1;
                    self.record(PersistEvent::ParityWritten { stripe });
                    (Phase::Redundancy(mask, work), PassStep::Parity { stripe })
                }
            },
            Phase::Done => return Ok(None),
        };
        self.phase = next;
        Ok(Some(step))
    }

    fn release(&mut self, mask: DirtyBitvector) -> Result<Option<PassStep>> {
        let start = mask.base_page();
        self.record(PersistEvent::OrderingPoint);
        self.shadow.clear();
        self.record(PersistEvent::ShadowCleared { batch_start: start });
        self.next_batch = mask.end_page();
        self.phase = Phase::Check;
        Ok(Some(PassStep::ClearShadow { start }))
    }

    fn step_meta(&mut self) -> Result<Option<PassStep>> {
        self.region.refresh_meta()?;
        self.record(PersistEvent::MetaChecksumWritten);
        self.phase = Phase::Done;
        Ok(Some(PassStep::MetaChecksum))
    }

    /// Drives the pass to completion.
    pub fn run(mut self) -> Result<PassStats> {
        while self.step()?.is_some() {}
        Ok(self.stats)
    }
}

/// Runs one full updater pass.
pub fn run_one_pass(store: &PagedStore, region: &RedundancyRegion, shadow: &ShadowState) -> Result<PassStats> {
    PassCursor::new(store, region, shadow).run()
}

/// Finishes the batch left behind by an updater that died mid-batch: pages
/// in the persisted shadow copy get fresh checksums and parity before the
/// shadow copy is cleared. A no-op when the shadow copy is clear.
pub fn recover_shadow(
    store: &PagedStore,
    region: &RedundancyRegion,
    shadow: &ShadowState,
    log: Option<&PersistLog>,
) -> Result<PassStats> {
    let mut stats = PassStats::default();
    if shadow.is_clear() {
        return Ok(stats);
    }
    let mask = shadow.snapshot(store.num_pages());
    let stripes = region.stripes();
    for page in mask.pages() {
        region.checksum_page(store, page)?;
        stats.pages_checksummed += 1;
        if let Some(l) = log {
            l.record(PersistEvent::ChecksumWritten { page });
        }
    }
    let mut touched: Vec<usize> = mask.pages().map(|p| stripes.stripe_of(p)).collect();
    touched.dedup();
    for stripe in touched {
        region.recompute_parity(store, stripe)?;
        stats.stripes_reparitied += 1;
        if let Some(l) = log {
            l.record(PersistEvent::ParityWritten { stripe });
        }
    }
    if let Some(l) = log {
        l.record(PersistEvent::OrderingPoint);
    }
    shadow.clear();
    if let Some(l) = log {
        l.record(PersistEvent::ShadowCleared {
            batch_start: mask.base_page(),
        });
    }
    region.refresh_meta()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::redundancy::{verify_convergence, StripeConfig};
    use crate::store::StoreConfig;

    fn setup(pages: usize, batch: usize) -> (PagedStore, RedundancyRegion, ShadowState) {
        let store = PagedStore::new(StoreConfig {
            page_size: 256,
            cache_line: 64,
            num_pages: pages,
            batch_size: batch,
        })
        .unwrap();
        let region = RedundancyRegion::initialize(&store, StripeConfig::default()).unwrap();
        (store, region, ShadowState::new(batch))
    }

    #[test]
    fn quiescent_pass_does_no_redundancy_work() {
        let (st, r, sh) = setup(20, 8);
        let stats = run_one_pass(&st, &r, &sh).unwrap();
        assert_eq!(stats.pages_checksummed, 0);
        assert_eq!(stats.stripes_reparitied, 0);
        assert_eq!(stats.batches, 3);
        assert_eq!(st.dirty_bit_ops().get_calls, 3);
    }

    #[test]
    fn repeated_writes_cost_one_checksum() {
        let (st, r, sh) = setup(20, 8);
        for line in 0..3 {
            st.write(5, line * 64, &[line as u8 + 1; 64]).unwrap();
        }
        let stats = run_one_pass(&st, &r, &sh).unwrap();
        assert_eq!(stats.pages_checksummed, 1);
        assert_eq!(stats.stripes_reparitied, 1);
        assert!(verify_convergence(&st, &r).is_converged());
    }

    #[test]
    fn one_dirty_page_reparities_its_stripe() {
        let (st, r, sh) = setup(8, 8);
        st.write(0, 0, &[9; 64]).unwrap();
        let stats = run_one_pass(&st, &r, &sh).unwrap();
        assert_eq!((stats.pages_checksummed, stats.stripes_reparitied), (1, 1));
    }

    #[test]
    fn stripe_parity_flag_is_per_stripe() {
        // Pages 0 and 3 share stripe 0, page 4 is stripe 1.
        let (st, r, sh) = setup(8, 8);
        for p in [0, 3, 4] {
            st.write(p, 0, &[p as u8 + 1; 64]).unwrap();
        }
        let stats = run_one_pass(&st, &r, &sh).unwrap();
        assert_eq!((stats.pages_checksummed, stats.stripes_reparitied), (3, 2));
        assert!(verify_convergence(&st, &r).is_converged());
    }

    #[test]
    fn stripes_spanning_batches_converge() {
        let (st, r, sh) = setup(11, 3);
        for p in 0..11 {
            st.write(p, 64, &[p as u8; 64]).unwrap();
        }
        run_one_pass(&st, &r, &sh).unwrap();
        assert!(verify_convergence(&st, &r).is_converged());
        assert!(sh.is_clear());
    }

    #[test]
    fn ordering_points_bracket_each_batch() {
        let (st, r, sh) = setup(16, 8);
        st.write(2, 0, &[1; 64]).unwrap();
        st.write(12, 0, &[1; 64]).unwrap();
        let log = PersistLog::new();
        PassCursor::new(&st, &r, &sh).with_log(&log).run().unwrap();
        use PersistEvent::*;
        assert_eq!(
            log.events(),
            vec![
                ShadowPersisted { batch_start: 0, pages: 1 },
                OrderingPoint,
                DirtyBitsCleared { batch_start: 0, cleared: 1 },
                ChecksumWritten { page: 2 },
                ParityWritten { stripe: 0 },
                OrderingPoint,
                ShadowCleared { batch_start: 0 },
                ShadowPersisted { batch_start: 8, pages: 1 },
                OrderingPoint,
                DirtyBitsCleared { batch_start: 8, cleared: 1 },
                ChecksumWritten { page: 12 },
                ParityWritten { stripe: 3 },
                OrderingPoint,
                ShadowCleared { batch_start: 8 },
                MetaChecksumWritten,
            ]
        );
    }

    #[test]
    fn shadow_covers_page_between_clear_and_checksum() {
        let (st, r, sh) = setup(8, 8);
        st.write(3, 0, &[7; 64]).unwrap();
        let mut cur = PassCursor::new(&st, &r, &sh);
        assert!(matches!(cur.step().unwrap(), Some(PassStep::CheckDirty { .. })));
        assert!(matches!(cur.step().unwrap(), Some(PassStep::PersistShadow { .. })));
        assert!(matches!(cur.step().unwrap(), Some(PassStep::ClearDirty { cleared: 1, .. })));
        assert!(!st.is_dirty(3));
        assert!(is_covered_pending(&st, &sh, 3));
        cur.run().unwrap();
        assert!(!is_covered_pending(&st, &sh, 3));
    }

    #[test]
    fn device_error_leaves_shadow_set() {
        let (st, r, sh) = setup(8, 8);
        st.write(1, 0, &[1; 64]).unwrap();
        st.write(6, 0, &[1; 64]).unwrap();
        r.fail_after_writes(1);
        assert!(run_one_pass(&st, &r, &sh).is_err());
        assert!(!sh.is_clear());
        assert!(is_covered_pending(&st, &sh, 1) && is_covered_pending(&st, &sh, 6));
        r.clear_write_failures();
        let rec = recover_shadow(&st, &r, &sh, None).unwrap();
        assert_eq!((rec.pages_checksummed, rec.stripes_reparitied), (2, 2));
        assert!(sh.is_clear());
        assert!(verify_convergence(&st, &r).is_converged());
    }

    #[test]
    fn recovery_is_noop_when_clear() {
        let (st, r, sh) = setup(8, 8);
        assert_eq!(recover_shadow(&st, &r, &sh, None).unwrap(), PassStats::default());
    }

    #[test]
    fn stop_ends_pass_after_current_batch() {
        let (st, r, sh) = setup(24, 8);
        for p in 0..24 {
            st.write(p, 0, &[1; 64]).unwrap();
        }
        let stop = StopSignal::new();
        let mut cur = PassCursor::new(&st, &r, &sh).with_stop(&stop);
        cur.step().unwrap();
        stop.raise();
        while cur.step().unwrap().is_some() {}
        let stats = cur.stats();
        assert!(stats.aborted);
        assert_eq!(stats.batches, 1);
        assert_eq!(stats.pages_checksummed, 8);
        assert!(sh.is_clear());
        assert_eq!(st.dirty_pages(), (8..24).collect::<Vec<_>>());
        assert!(r.meta_matches());
    }
}
