use serde::{Deserialize, Serialize};

use super::{crc32c, xor_into, RedundancyRegion};
use crate::store::PagedStore;

/// Result of checking every page checksum, every stripe parity and the
/// meta-checksum against the data as it is right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub pages: usize,
    pub pages_matching: usize,
    pub stripes: usize,
    pub stripes_matching: usize,
    pub meta_matches: bool,
    pub dirty_pages: usize,
}

impl ConvergenceReport {
    /// Every checksum and parity page is exact and the meta-checksum verifies.
    pub fn redundancy_exact(&self) -> bool {
        self.pages_matching == self.pages && self.stripes_matching == self.stripes && self.meta_matches
    }

    /// Redundancy is exact and nothing is left dirty.
    pub fn is_converged(&self) -> bool {
        self.redundancy_exact() && self.dirty_pages == 0
    }
}

/// Meant for quiescent stores; concurrent writers make the answer racy.
pub fn verify_convergence(store: &PagedStore, region: &RedundancyRegion) -> ConvergenceReport {
    let n = store.num_pages();
    let stripes = region.stripes();
    let mut report = ConvergenceReport {
        pages: n,
        stripes: region.num_stripes(),
        meta_matches: region.meta_matches(),
        dirty_pages: store.dirty_pages().len(),
        ..Default::default()
    };
    for page in 0..n {
        if store.with_page(page, crc32c).unwrap() == region.checksum(page) {
            report.pages_matching += 1;
        }
    }
    for stripe in 0..region.num_stripes() {
        let mut acc = vec![0u8; store.page_size()];
        for page in stripes.data_pages(stripe, n) {
            store.with_page(page, |b| xor_into(&mut acc, b)).unwrap();
        }
        if acc == region.parity_page(stripe) {
            report.stripes_matching += 1;
        }
    }
    report
}
