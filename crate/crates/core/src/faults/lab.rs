use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{inject_bit_flip, inject_lost_write, inject_misdirected, inject_rest_corruption, seeded_bytes};
use super::{FaultKind, FaultTrigger, OutcomeClass};
use crate::error::{Error, Result};
use crate::redundancy::{RedundancyRegion, StripeConfig};
use crate::scrubber::{RecoveryOutcome, Scrubber};
use crate::store::{PagedStore, StoreConfig};
use crate::updater::{run_one_pass, ShadowState};

/// One cell of the fault taxonomy: a fault, when it strikes, and the
/// redundancy state of the victim page and of the rest of its stripe at
/// that moment. For misdirected writes the victim is `aux`; otherwise it
/// is `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultCase {
    pub kind: FaultKind,
    pub trigger: FaultTrigger,
    pub target: usize,
    pub aux: Option<usize>,
    pub page_dirty: bool,
    pub stripe_dirty: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageOutcome {
    pub page: usize,
    pub class: OutcomeClass,
}

/// Runs single fault cases on a small freshly converged store and
/// classifies what happened to every page against a golden copy of what
/// the application wrote.
#[derive(Debug, Clone, Copy)]
pub struct FaultLab {
    pub store: StoreConfig,
    pub stripes: StripeConfig,
}

const LINE: usize = 64;

struct Bench {
    store: PagedStore,
    region: RedundancyRegion,
    shadow: ShadowState,
    golden: Vec<Vec<u8>>,
    seed: u64,
    writes: u64,
}

impl Bench {
    fn next_payload(&mut self) -> Vec<u8> {
        self.writes += 1;
        seeded_bytes(self.seed.wrapping_mul(1_000_003).wrapping_add(self.writes), LINE)
    }

    fn app_write(&mut self, page: usize, line: usize) -> Result<()> {
        let bytes = self.next_payload();
        self.store.write(page, line * LINE, &bytes)?;
        self.golden[page][line * LINE..(line + 1) * LINE].copy_from_slice(&bytes);
        Ok(())
    }

    fn staged_write(&mut self, page: usize, line: usize) -> Result<()> {
        let bytes = self.next_payload();
        self.store.stage_write(page, line * LINE, &bytes)?;
        self.golden[page][line * LINE..(line + 1) * LINE].copy_from_slice(&bytes);
        Ok(())
    }
}

impl FaultLab {
    /// A lab over `num_pages` pages of 256 bytes, batches of four pages and
    /// the default stripe geometry.
    pub fn new(num_pages: usize) -> Self {
        Self {
            store: StoreConfig {
                page_size: 256,
                cache_line: LINE,
                num_pages,
                batch_size: 4.min(num_pages),
            },
            stripes: StripeConfig::default(),
        }
    }

    /// Some other data page in the same stripe as `page`.
    pub fn sibling(&self, page: usize) -> Option<usize> {
        let s = self.stripes.stripe_of(page);
        self.stripes.data_pages(s, self.store.num_pages).find(|&p| p != page)
    }

    fn bench(&self, seed: u64) -> Result<Bench> {
        if self.store.cache_line != LINE || self.store.lines_per_page() < 3 {
            return Err(Error::InvalidConfig("fault lab needs 64-byte lines and at least 3 per page".into()));
        }
        let store = PagedStore::new(self.store)?;
        let region = RedundancyRegion::initialize(&store, self.stripes)?;
        let shadow = ShadowState::new(self.store.batch_size);
        let n = self.store.num_pages;
        let mut b = Bench {
            store,
            region,
            shadow,
            golden: vec![vec![0; self.store.page_size]; n],
            seed,
            writes: 0,
        };
        for p in 0..n {
            for line in 0..self.store.lines_per_page() {
                b.app_write(p, line)?;
            }
        }
        run_one_pass(&b.store, &b.region, &b.shadow)?;
        Ok(b)
    }

    /// Applies the case and returns every page whose outcome is not
    /// [`OutcomeClass::NoEffect`], in page order.
    pub fn run(&self, case: &FaultCase) -> Result<Vec<PageOutcome>> {
        let n = self.store.num_pages;
        if case.target >= n || case.aux.is_some_and(|a| a >= n || a == case.target) {
            return Err(Error::InvalidConfig("fault case pages out of range".into()));
        }
        if !case.kind.triggers().contains(&case.trigger) {
            return Err(Error::InvalidConfig(format!("{:?} cannot strike {:?}", case.kind, case.trigger)));
        }
        let victim = match case.kind {
            FaultKind::MisdirectedWrite => case.aux,
            FaultKind::MisdirectedRead => case.aux.map(|_| case.target),
            _ => Some(case.target),
        }
        .ok_or_else(|| Error::InvalidConfig("misdirection needs aux".into()))?;
        let sibling = match (case.stripe_dirty, self.sibling(victim)) {
            (false, s) => s,
            (true, Some(s)) => Some(s),
            (true, None) => return Err(Error::InvalidConfig(format!("page {victim} has no stripe sibling"))),
        };

        let mut b = self.bench(case.seed)?;
        let dirty_victim = |b: &mut Bench| -> Result<()> {
            if case.page_dirty {
                b.app_write(victim, 1)?;
            }
            if case.stripe_dirty {
                b.app_write(sibling.expect("checked above"), 2)?;
            }
            Ok(())
        };
        let mut misread = None;
        match (case.kind, case.trigger) {
            (FaultKind::LostWrite, FaultTrigger::BeforeRedundancyUpdate) => {
                b.staged_write(victim, 0)?;
                dirty_victim(&mut b)?;
                inject_lost_write(&b.store, victim);
            }
            (FaultKind::LostWrite, _) => {
                b.staged_write(victim, 0)?;
                run_one_pass(&b.store, &b.region, &b.shadow)?;
                dirty_victim(&mut b)?;
                inject_lost_write(&b.store, victim);
            }
            (FaultKind::RestCorruption, _) => {
                dirty_victim(&mut b)?;
                inject_rest_corruption(&b.store, victim, case.seed)?;
            }
            (FaultKind::BitFlip, _) => {
                dirty_victim(&mut b)?;
                inject_bit_flip(&b.store, victim, case.seed)?;
            }
            (FaultKind::MisdirectedWrite, _) => {
                dirty_victim(&mut b)?;
                let payload = b.next_payload();
                b.golden[case.target][..LINE].copy_from_slice(&payload);
                inject_misdirected(&b.store, case.kind, case.target, victim, 0, &payload)?;
            }
            (FaultKind::MisdirectedRead, _) => {
                dirty_victim(&mut b)?;
                let aux = case.aux.expect("checked above");
                misread = inject_misdirected(&b.store, case.kind, case.target, aux, 0, &[0; LINE])?;
            }
        }
        b.store.destage_all();

        let mut reported: BTreeMap<usize, RecoveryOutcome> = BTreeMap::new();
        let scrubber = Scrubber::new();
        let mut observe = |b: &Bench| {
            for r in scrubber.scrub_and_recover(&b.store, &b.region, &b.shadow).reports {
                reported.entry(r.page).or_insert(r.outcome.expect("recovery attempted"));
            }
        };
        observe(&b);
        run_one_pass(&b.store, &b.region, &b.shadow)?;
        observe(&b);

        let mut out = Vec::new();
        for page in 0..n {
            let intact = b.store.read_page(page)? == b.golden[page];
            let class = match reported.get(&page) {
                Some(RecoveryOutcome::Recovered) if intact => OutcomeClass::DetectedRecovered,
                Some(RecoveryOutcome::Recovered) => OutcomeClass::Silent,
                Some(_) => OutcomeClass::DetectedUnrecoverable,
                None if intact => OutcomeClass::NoEffect,
                None => OutcomeClass::Silent,
            };
            if class != OutcomeClass::NoEffect {
                out.push(PageOutcome { page, class });
            }
        }
        if let Some(bytes) = misread {
            if bytes != b.golden[case.target][..LINE] {
                out.retain(|o| o.page != case.target);
                out.push(PageOutcome {
                    page: case.target,
                    class: OutcomeClass::Silent,
                });
                out.sort_by_key(|o| o.page);
            }
        }
        Ok(out)
    }
}
