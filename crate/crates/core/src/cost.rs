//! Simulated time costs.
//!
//! Wall-clock kernel costs cannot be reproduced in emulation, so elapsed
//! time is derived from operation counts. The defaults are rough figures
//! for a server-class core with CRC and SIMD support.

use serde::{Deserialize, Serialize};

use crate::store::DirtyBitOps;
use crate::updater::PassStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub checksum_ns_per_page: f64,
    pub parity_ns_per_stripe: f64,
    pub syscall_ns: f64,
    pub walk_step_ns: f64,
    pub dirty_bit_ns: f64,
    pub tlb_invalidation_ns: f64,
    pub write_ns_per_line: f64,
    pub read_ns_per_line: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            checksum_ns_per_page: 1_000.0,
            parity_ns_per_stripe: 1_500.0,
            syscall_ns: 500.0,
            walk_step_ns: 100.0,
            dirty_bit_ns: 2.0,
            tlb_invalidation_ns: 150.0,
            write_ns_per_line: 100.0,
            read_ns_per_line: 50.0,
        }
    }
}

impl CostModel {
    /// Seconds spent checking and clearing dirty bits.
    pub fn dirty_bit_seconds(&self, ops: &DirtyBitOps) -> f64 {
        (ops.syscalls() as f64 * self.syscall_ns
            + ops.walk_steps as f64 * self.walk_step_ns
            + (ops.bits_read + ops.bits_reset) as f64 * self.dirty_bit_ns
            + ops.tlb_invalidations as f64 * self.tlb_invalidation_ns)
            * 1e-9
    }

    /// Seconds spent on checksums and parity.
    pub fn redundancy_seconds(&self, stats: &PassStats) -> f64 {
        (stats.pages_checksummed as f64 * self.checksum_ns_per_page
            + stats.stripes_reparitied as f64 * self.parity_ns_per_stripe)
            * 1e-9
    }

    /// Simulated duration of a pass given its counters and the dirty-bit
    /// operations it issued.
    pub fn pass_seconds(&self, stats: &PassStats, ops: &DirtyBitOps) -> f64 {
        self.redundancy_seconds(stats) + self.dirty_bit_seconds(ops)
    }

    pub fn op_seconds(&self, is_write: bool, len: usize, cache_line: usize) -> f64 {
        let lines = len.div_ceil(cache_line).max(1) as f64;
        let per = if is_write {
            self.write_ns_per_line
        } else {
            self.read_ns_per_line
        };
        lines * per * 1e-9
    }
}
