//! Background verification of clean pages.
//!
//! Pages with pending redundancy (dirty or shadowed) are skipped. A clean
//! page whose data no longer matches its checksum is re-checked before it
//! is reported: the page must still be clean and its stored checksum must
//! be the same entry (same generation) that was compared. A write that
//! raced with the verification either keeps the page pending or forces the
//! updater to store a new checksum generation, so neither produces a report.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::redundancy::{crc32c, reconstruct, ChecksumEntry, RedundancyRegion};
use crate::store::PagedStore;
use crate::updater::{is_covered_pending, ShadowState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryOutcome {
    Recovered,
    /// Another page of the stripe has pending redundancy, so parity is stale.
    UnrecoverableDirtyStripe,
    /// Reconstruction did not match the stored checksum (more than one
    /// corrupted page in the stripe).
    Unrecoverable,
}

impl RecoveryOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecoveryOutcome::Recovered => "recovered",
            RecoveryOutcome::UnrecoverableDirtyStripe => "unrecoverable_dirty_stripe",
            RecoveryOutcome::Unrecoverable => "unrecoverable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub pass: u64,
    pub page: usize,
    pub stripe: usize,
    pub outcome: Option<RecoveryOutcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubReport {
    pub pass: u64,
    pub pages_verified: u64,
    pub pages_skipped: u64,
    pub reports: Vec<CorruptionReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Check(usize),
    ReadEntry(usize),
    Verify(usize, ChecksumEntry),
    Recheck(usize, ChecksumEntry),
    Done,
}

/// One step of a scrub pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScrubStep {
    Skipped { page: usize },
    Clean { page: usize },
    EntryRead { page: usize },
    Verified { page: usize },
    Mismatch { page: usize },
    FalseAlarmAvoided { page: usize },
    Reported { page: usize },
}

/// An in-progress scrub pass, lowest page first.
pub struct ScrubCursor<'a> {
    store: &'a PagedStore,
    region: &'a RedundancyRegion,
    shadow: &'a ShadowState,
    phase: Phase,
    report: ScrubReport,
}

impl<'a> ScrubCursor<'a> {
    pub fn new(store: &'a PagedStore, region: &'a RedundancyRegion, shadow: &'a ShadowState, pass: u64) -> Self {
        Self {
            store,
            region,
            shadow,
            phase: if store.num_pages() == 0 { Phase::Done } else { Phase::Check(0) },
            report: ScrubReport {
                pass,
                ..Default::default()
            },
        }
    }

    fn advance(&mut self, page: usize) {
        self.phase = if page + 1 < self.store.num_pages() {
            Phase::Check(page + 1)
        } else {
            Phase::Done
        };
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn step(&mut self) -> Option<ScrubStep> {
        let pending = |p| is_covered_pending(self.store, self.shadow, p);
        match self.phase {
            Phase::Done => None,
            Phase::Check(page) => {
                if pending(page) {
                    self.report.pages_skipped += 1;
                    self.advance(page);
                    Some(ScrubStep::Skipped { page })
                } else {
                    self.phase = Phase::ReadEntry(page);
                    Some(ScrubStep::Clean { page })
                }
            }
            Phase::ReadEntry(page) => {
                self.phase = Phase::Verify(page, self.region.entry(page));
                Some(ScrubStep::EntryRead { page })
            }
            Phase::Verify(page, entry) => {
                let crc = self.store.with_page(page, crc32c).expect("page in range");
                if crc == entry.crc {
                    self.report.pages_verified += 1;
                    self.advance(page);
                    Some(ScrubStep::Verified { page })
                } else {
                    self.phase = Phase::Recheck(page, entry);
                    Some(ScrubStep::Mismatch { page })
                }
            }
            Phase::Recheck(page, entry) => {
                self.report.pages_verified += 1;
                self.advance(page);
                if pending(page) || self.region.entry(page) != entry {
                    Some(ScrubStep::FalseAlarmAvoided { page })
                } else {
                    self.report.reports.push(CorruptionReport {
                        pass: self.report.pass,
                        page,
                        stripe: self.region.stripes().stripe_of(page),
                        outcome: None,
                    });
                    Some(ScrubStep::Reported { page })
                }
            }
        }
    }

    pub fn report(&self) -> &ScrubReport {
        &self.report
    }

    pub fn finish(mut self) -> ScrubReport {
        while self.step().is_some() {}
        self.report
    }
}

/// Scrubber state that outlives individual passes.
#[derive(Debug, Default)]
pub struct Scrubber {
    passes: AtomicU64,
    halted: AtomicBool,
}

impl Scrubber {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::SeqCst)
    }

    /// Set once any corruption has been reported.
    pub fn halted(&self) -> bool {
        self.halted.load(Ordering::SeqCst)
    }

    pub fn cursor<'a>(&self, store: &'a PagedStore, region: &'a RedundancyRegion, shadow: &'a ShadowState) -> ScrubCursor<'a> {
        let pass = self.passes.fetch_add(1, Ordering::SeqCst) + 1;
        ScrubCursor::new(store, region, shadow, pass)
    }

    pub fn scrub_one_pass(&self, store: &PagedStore, region: &RedundancyRegion, shadow: &ShadowState) -> ScrubReport {
        let report = self.cursor(store, region, shadow).finish();
        self.note(&report);
        report
    }

    /// Folds a report produced by a cursor into the halt flag.
    pub fn note(&self, report: &ScrubReport) {
        if !report.reports.is_empty() {
            self.halted.store(true, Ordering::SeqCst);
        }
    }

    /// Scrubs once and attempts recovery of every reported page.
    pub fn scrub_and_recover(&self, store: &PagedStore, region: &RedundancyRegion, shadow: &ShadowState) -> ScrubReport {
        let mut report = self.scrub_one_pass(store, region, shadow);
        for r in &mut report.reports {
            r.outcome = Some(attempt_recovery(store, region, shadow, r.page));
        }
        report
    }
}

/// A single scrub pass with a fresh [`Scrubber`].
pub fn scrub_one_pass(store: &PagedStore, region: &RedundancyRegion, shadow: &ShadowState) -> ScrubReport {
    Scrubber::new().scrub_one_pass(store, region, shadow)
}

/// Rebuilds a reported page from its stripe's parity. Only possible when
/// no page of the stripe has pending redundancy; the rebuilt bytes must
/// match the stored checksum before they are written back.
pub fn attempt_recovery(
    store: &PagedStore,
    region: &RedundancyRegion,
    shadow: &ShadowState,
    page: usize,
) -> RecoveryOutcome {
    let stripes = region.stripes();
    let stripe = stripes.stripe_of(page);
    let members = stripes.data_pages(stripe, store.num_pages());
    if members.clone().any(|p| is_covered_pending(store, shadow, p)) {
        return RecoveryOutcome::UnrecoverableDirtyStripe;
    }
    let survivors: Vec<Vec<u8>> = members
        .filter(|&p| p != page)
        .map(|p| store.read_page(p).expect("stripe page in range"))
        .collect();
    let rebuilt = reconstruct(&region.parity_page(stripe), &survivors);
    if crc32c(&rebuilt) != region.checksum(page) {
        return RecoveryOutcome::Unrecoverable;
    }
    store.restore_page(page, &rebuilt).expect("page in range");
    if store.with_page(page, crc32c).expect("page in range") == region.checksum(page) {
        RecoveryOutcome::Recovered
    } else {
        // A write raced with the restore; the updater now owns the page.
        RecoveryOutcome::Unrecoverable
    }
}
