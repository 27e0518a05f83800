//! Firmware-bug fault injection and power-failure simulation.
//!
//! Faults act below system software: they change media bytes without
//! setting dirty bits. Whether such a change is caught depends on the state
//! of the victim page when it happens:
//!
//! * victim page has pending redundancy: the updater checksums the bad
//!   bytes and the corruption becomes silent;
//! * victim page clean: the scrubber reports it, and it is recoverable when
//!   every other page of its stripe is clean too.

mod battery;
mod lab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::PagedStore;

pub use battery::{simulate_power_failure, BatteryModel, BatteryReport};
pub use lab::{FaultCase, FaultLab, PageOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    LostWrite,
    MisdirectedWrite,
    MisdirectedRead,
    RestCorruption,
    BitFlip,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::LostWrite,
        FaultKind::MisdirectedWrite,
        FaultKind::MisdirectedRead,
        FaultKind::RestCorruption,
        FaultKind::BitFlip,
    ];

    pub fn is_misdirected(self) -> bool {
        matches!(self, FaultKind::MisdirectedWrite | FaultKind::MisdirectedRead)
    }

    /// Triggers that make sense for this kind of fault.
    pub fn triggers(self) -> &'static [FaultTrigger] {
        match self {
            FaultKind::LostWrite => &[FaultTrigger::BeforeRedundancyUpdate, FaultTrigger::AfterRedundancyUpdate],
            _ => &[FaultTrigger::AtRest],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTrigger {
    /// A staged write is lost before the updater sees it.
    BeforeRedundancyUpdate,
    /// A staged write is lost after the updater checksummed it.
    AfterRedundancyUpdate,
    AtRest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Silent,
    DetectedRecovered,
    DetectedUnrecoverable,
    NoEffect,
}

fn default_trigger() -> FaultTrigger {
    FaultTrigger::AtRest
}

/// One scheduled fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub kind: FaultKind,
    pub target_page: usize,
    #[serde(default)]
    pub aux_page: Option<usize>,
    #[serde(default = "default_trigger")]
    pub trigger: FaultTrigger,
    #[serde(default)]
    pub payload_seed: u64,
    /// Simulated seconds into the run.
    #[serde(default)]
    pub at: f64,
}

impl FaultEvent {
    pub fn validate(&self, num_pages: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.target_page >= num_pages {
            return bad(format!("fault target page {} out of range", self.target_page));
        }
        if !self.kind.triggers().contains(&self.trigger) {
            return bad(format!("trigger {:?} does not apply to {:?}", self.trigger, self.kind));
        }
        if !(self.at.is_finite() && self.at >= 0.0) {
            return bad(format!("fault time {} must be non-negative", self.at));
        }
        match (self.kind.is_misdirected(), self.aux_page) {
            (true, None) => bad(format!("{:?} needs aux_page", self.kind)),
            (true, Some(a)) if a == self.target_page => bad("aux_page must differ from target_page".into()),
            (true, Some(a)) if a >= num_pages => bad(format!("aux page {a} out of range")),
            _ => Ok(()),
        }
    }
}

/// Deterministic pseudo-random bytes.
pub fn seeded_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0u8; len];
    rng.fill(&mut v[..]);
    v
}

/// The firmware forgets the staged writes to `page`. Returns false, doing
/// nothing, when no write to the page is staged.
pub fn inject_lost_write(store: &PagedStore, page: usize) -> bool {
    store.drop_staged(page)
}

/// Overwrites a whole page with seeded random bytes below software.
pub fn inject_rest_corruption(store: &PagedStore, page: usize, payload_seed: u64) -> Result<()> {
    store.firmware_write(page, 0, &seeded_bytes(payload_seed, store.page_size()))
}

/// Flips one seeded bit of the page below software; returns the bit index.
pub fn inject_bit_flip(store: &PagedStore, page: usize, payload_seed: u64) -> Result<usize> {
    let bit = ChaCha8Rng::seed_from_u64(payload_seed).random_range(0..store.page_size() * 8);
    let byte = store.read(page, bit / 8, 1)?[0] ^ (1 << (bit % 8));
    store.firmware_write(page, bit / 8, &[byte])?;
    Ok(bit)
}

/// Misdirected write: `payload`, meant for `target` at `offset`, lands on
/// `aux`. Misdirected read: returns `aux`'s bytes for a read of `target`.
pub fn inject_misdirected(
    store: &PagedStore,
    kind: FaultKind,
    target: usize,
    aux: usize,
    offset: usize,
    payload: &[u8],
) -> Result<Option<Vec<u8>>> {
    if target == aux {
        return Err(Error::InvalidConfig("misdirection needs two distinct pages".into()));
    }
    match kind {
        FaultKind::MisdirectedWrite => store.misdirect_write(target, aux, offset, payload).map(|_| None),
        FaultKind::MisdirectedRead => store.misdirected_read(target, aux, offset, payload.len()).map(Some),
        other => Err(Error::InvalidConfig(format!("{other:?} is not a misdirection"))),
    }
}
