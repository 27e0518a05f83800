use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::Result;
use crate::redundancy::RedundancyRegion;
use crate::store::PagedStore;
use crate::updater::{recover_shadow, PassCursor, ShadowState};

/// Server power draw and battery prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryModel {
    pub watts: f64,
    pub ultracap_usd_per_kj: f64,
    pub liion_usd_per_kj: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            watts: 500.0,
            ultracap_usd_per_kj: 2.85,
            liion_usd_per_kj: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatteryReport {
    pub pass_seconds: f64,
    pub energy_kj: f64,
    pub ultracap_usd: f64,
    pub liion_usd: f64,
    pub pages_checksummed: u64,
    pub stripes_reparitied: u64,
}

impl BatteryModel {
    /// Energy and battery cost of running for `pass_seconds` at full draw.
    pub fn report_for(&self, pass_seconds: f64) -> BatteryReport {
        let energy_kj = self.watts * pass_seconds / 1000.0;
        BatteryReport {
            pass_seconds,
            energy_kj,
            ultracap_usd: energy_kj * self.ultracap_usd_per_kj,
            liion_usd: energy_kj * self.liion_usd_per_kj,
            pages_checksummed: 0,
            stripes_reparitied: 0,
        }
    }
}

/// Power fails: staged writes are durable (battery-backed caches), any
/// half-finished batch is completed from its shadow copy, and one full pass
/// runs on battery. Afterwards every page is clean and redundancy is exact.
pub fn simulate_power_failure(
    store: &PagedStore,
    region: &RedundancyRegion,
    shadow: &ShadowState,
    battery: &BatteryModel,
    cost: &CostModel,
) -> Result<BatteryReport> {
    store.destage_all();
    let ops_before = store.dirty_bit_ops();
    let mut stats = recover_shadow(store, region, shadow, None)?;
    stats.absorb(&PassCursor::new(store, region, shadow).run()?);
    let ops = store.dirty_bit_ops().since(&ops_before);
    let mut report = battery.report_for(cost.pass_seconds(&stats, &ops));
    report.pages_checksummed = stats.pages_checksummed;
    report.stripes_reparitied = stats.stripes_reparitied;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::redundancy::{verify_convergence, StripeConfig};
    use crate::store::StoreConfig;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn five_seconds_at_500_watts() {
        let r = BatteryModel::default().report_for(5.0);
        assert!(close(r.energy_kj, 2.5));
        assert!(close(r.ultracap_usd, 7.125));
        assert!(close(r.liion_usd, 0.05));
    }

    #[test]
    fn four_and_a_half_seconds() {
        let r = BatteryModel::default().report_for(4.5);
        assert!(close(r.energy_kj, 2.25));
        assert!(close(r.ultracap_usd, 6.4125));
        assert!(close(r.liion_usd, 0.045));
    }

    #[test]
    fn power_failure_converges_and_prices_the_pass() {
        let st = PagedStore::new(StoreConfig::with_pages(64)).unwrap();
        let region = RedundancyRegion::initialize(&st, StripeConfig::default()).unwrap();
        let sh = ShadowState::new(64);
        let cost = CostModel::default();
        let idle = simulate_power_failure(&st, &region, &sh, &BatteryModel::default(), &cost).unwrap();
        assert_eq!(idle.pages_checksummed, 0);

        for p in 0..40 {
            st.stage_write(p, 0, &[p as u8; 64]).unwrap();
        }
        let busy = simulate_power_failure(&st, &region, &sh, &BatteryModel::default(), &cost).unwrap();
        assert_eq!(busy.pages_checksummed, 40);
        assert_eq!(busy.stripes_reparitied, 10);
        assert!(busy.energy_kj > idle.energy_kj);
        assert!(idle.energy_kj > 0.0);
        assert!(verify_convergence(&st, &region).is_converged());
        assert!(!st.drop_staged(3));
        assert_eq!(st.read(3, 0, 64).unwrap(), vec![3; 64]);
    }
}
