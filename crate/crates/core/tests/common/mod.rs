//! Oracles and the step-interleaving harness shared by the integration
//! tests. Nothing here calls into the crate's own CRC or parity code.
#![allow(dead_code)]

use asyred::faults::{simulate_power_failure, BatteryModel};
use asyred::cost::CostModel;
use asyred::redundancy::{RedundancyRegion, StripeConfig};
use asyred::scrubber::{ScrubCursor, ScrubStep};
use asyred::store::{PagedStore, StoreConfig};
use asyred::updater::{recover_shadow, PassCursor, PassStep, ShadowState};
use crc::{Crc, CRC_32_ISCSI};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASTAGNOLI: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);

pub fn crc_oracle(bytes: &[u8]) -> u32 {
    CASTAGNOLI.checksum(bytes)
}

/// Byte-at-a-time XOR of equally sized pages.
pub fn xor_oracle(pages: &[Vec<u8>], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for p in pages {
        for (o, b) in out.iter_mut().zip(p) {
            *o ^= b;
        }
    }
    out
}

pub fn meta_oracle(region: &RedundancyRegion) -> u32 {
    let mut bytes = Vec::with_capacity(region.num_pages() * 4);
    for p in 0..region.num_pages() {
        bytes.extend_from_slice(&region.checksum(p).to_le_bytes());
    }
    crc_oracle(&bytes)
}

/// Everything that keeps the store from being quiescent and exactly
/// covered. Empty means converged.
pub fn convergence_violations(store: &PagedStore, region: &RedundancyRegion, shadow: &ShadowState) -> Vec<String> {
    let mut out = Vec::new();
    let n = store.num_pages();
    let pages: Vec<Vec<u8>> = (0..n).map(|p| store.read_page(p).unwrap()).collect();
    for (p, bytes) in pages.iter().enumerate() {
        if store.is_dirty(p) {
            out.push(format!("page {p} dirty"));
        }
        if crc_oracle(bytes) != region.checksum(p) {
            out.push(format!("page {p} checksum mismatch"));
        }
    }
    let stripes = region.stripes();
    for s in 0..stripes.num_stripes(n) {
        let members: Vec<Vec<u8>> = stripes.data_pages(s, n).map(|p| pages[p].clone()).collect();
        if xor_oracle(&members, store.page_size()) != region.parity_page(s) {
            out.push(format!("stripe {s} parity mismatch"));
        }
    }
    if meta_oracle(region) != region.meta_checksum() {
        out.push("meta-checksum mismatch".into());
    }
    if !shadow.is_clear() {
        out.push("shadow bits still set".into());
    }
    out
}

pub fn pending(store: &PagedStore, shadow: &ShadowState, page: usize) -> bool {
    store.is_dirty(page) || shadow.is_set_for(page)
}

/// Pages whose redundancy is stale while nothing marks them pending:
/// written since their last checksum (per the model or per the oracle
/// CRC), or members of a stripe whose parity is stale with no pending page.
pub fn missed_coverage(store: &PagedStore, region: &RedundancyRegion, shadow: &ShadowState, written: &[bool]) -> Vec<String> {
    let n = store.num_pages();
    let mut out = Vec::new();
    let pages: Vec<Vec<u8>> = (0..n).map(|p| store.read_page(p).unwrap()).collect();
    for p in 0..n {
        let stale = written[p] || crc_oracle(&pages[p]) != region.checksum(p);
        if stale && !pending(store, shadow, p) {
            out.push(format!("page {p} stale but uncovered"));
        }
    }
    let stripes = region.stripes();
    for s in 0..stripes.num_stripes(n) {
        let range = stripes.data_pages(s, n);
        if range.clone().any(|p| pending(store, shadow, p)) {
            continue;
        }
        let members: Vec<Vec<u8>> = range.map(|p| pages[p].clone()).collect();
        if xor_oracle(&members, store.page_size()) != region.parity_page(s) {
            out.push(format!("stripe {s} parity stale but uncovered"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ScheduleParams {
    pub num_pages: usize,
    pub page_size: usize,
    pub steps: usize,
    /// Relative weights of write, updater step, scrub step, kill.
    pub weights: [u32; 4],
    /// Fraction of writes that go through the device write-back cache.
    pub staged_fraction: f64,
}

impl ScheduleParams {
    pub fn race(num_pages: usize) -> Self {
        Self {
            num_pages,
            page_size: 128,
            steps: 60,
            weights: [3, 4, 3, 0],
            staged_fraction: 0.0,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct ScheduleOutcome {
    pub steps: usize,
    pub writes: u64,
    pub updater_steps: u64,
    pub scrub_steps: u64,
    pub kills: u64,
    pub passes_completed: u64,
    pub false_alarms: u64,
    pub false_alarms_avoided: u64,
    pub violations: Vec<String>,
}

/// Geometry drawn for a schedule.
pub struct Rig {
    pub store: PagedStore,
    pub region: RedundancyRegion,
    pub shadow: ShadowState,
}

impl Rig {
    pub fn random(rng: &mut ChaCha8Rng, params: &ScheduleParams) -> Rig {
        let n = params.num_pages;
        let batch = rng.random_range(1..=n);
        let d = rng.random_range(1..=n);
        let store = PagedStore::new(StoreConfig {
            page_size: params.page_size,
            cache_line: 64,
            num_pages: n,
            batch_size: batch,
        })
        .unwrap();
        for p in 0..n {
            let mut bytes = vec![0u8; params.page_size];
            rng.fill(&mut bytes[..]);
            store.write(p, 0, &bytes).unwrap();
        }
        let region = RedundancyRegion::initialize(&store, StripeConfig::new(d)).unwrap();
        let shadow = ShadowState::new(batch);
        asyred::updater::run_one_pass(&store, &region, &shadow).unwrap();
        Rig { store, region, shadow }
    }
}

fn pick(rng: &mut ChaCha8Rng, weights: &[u32; 4]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut x = rng.random_range(0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    unreachable!()
}

/// Runs one randomized interleaving of application writes, updater steps,
/// scrubber steps and (optionally) updater kills, checking for missed
/// coverage after every step. A killed updater is restarted on its next
/// turn by finishing the shadowed batch. Returns the rig for further
/// checks.
pub fn run_schedule(seed: u64, params: &ScheduleParams, out: &mut ScheduleOutcome) -> Rig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = Rig::random(&mut rng, params);
    drive(&rig, &mut rng, params, out);
    rig
}

fn drive(rig: &Rig, rng: &mut ChaCha8Rng, params: &ScheduleParams, out: &mut ScheduleOutcome) {
    let Rig { store, region, shadow } = rig;
    let n = params.num_pages;
    let lines = params.page_size / 64;
    let mut written = vec![false; n];
    let mut updater: Option<PassCursor> = None;
    let mut killed = false;
    let mut scrub: Option<ScrubCursor> = None;
    for _ in 0..params.steps {
        out.steps += 1;
        match pick(rng, &params.weights) {
            0 => {
                let page = rng.random_range(0..n);
                let line = rng.random_range(0..lines);
                let mut bytes = [0u8; 64];
                rng.fill(&mut bytes[..]);
                if rng.random_bool(params.staged_fraction) {
                    store.stage_write(page, line * 64, &bytes).unwrap();
                } else {
                    store.write(page, line * 64, &bytes).unwrap();
                }
                written[page] = true;
                out.writes += 1;
            }
            1 => {
                if killed {
                    for p in shadow.snapshot(n).pages() {
                        written[p] = false;
                    }
                    recover_shadow(store, region, shadow, None).unwrap();
                    killed = false;
                }
                let cursor = updater.get_or_insert_with(|| PassCursor::new(store, region, shadow));
                out.updater_steps += 1;
                match cursor.step().unwrap() {
                    Some(PassStep::Checksum { page }) => written[page] = false,
                    Some(_) => {}
                    None => {
                        updater = None;
                        out.passes_completed += 1;
                    }
                }
            }
            2 => {
                let cursor = scrub.get_or_insert_with(|| ScrubCursor::new(store, region, shadow, 0));
                out.scrub_steps += 1;
                match cursor.step() {
                    Some(ScrubStep::Reported { page }) => {
                        out.false_alarms += 1;
                        out.violations.push(format!("false alarm on page {page}"));
                    }
                    Some(ScrubStep::FalseAlarmAvoided { .. }) => out.false_alarms_avoided += 1,
                    Some(_) => {}
                    None => scrub = None,
                }
            }
            _ => {
                if updater.take().is_some() {
                    killed = true;
                    out.kills += 1;
                }
            }
        }
        let missed = missed_coverage(store, region, shadow, &written);
        out.violations.extend(missed);
    }
}

/// A schedule cut short by a power failure at a random step, followed by
/// the battery-backed pass. Returns the convergence violations afterwards.
pub fn power_failure_trial(seed: u64, params: &ScheduleParams) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = Rig::random(&mut rng, params);
    let cut = ScheduleParams {
        steps: rng.random_range(0..=params.steps),
        ..*params
    };
    let mut out = ScheduleOutcome::default();
    drive(&rig, &mut rng, &cut, &mut out);
    let image: Vec<Vec<u8>> = (0..params.num_pages).map(|p| rig.store.read_page(p).unwrap()).collect();
    simulate_power_failure(&rig.store, &rig.region, &rig.shadow, &BatteryModel::default(), &CostModel::default())
        .unwrap();
    let mut v = out.violations;
    v.extend(convergence_violations(&rig.store, &rig.region, &rig.shadow));
    for (p, before) in image.iter().enumerate() {
        if &rig.store.read_page(p).unwrap() != before {
            v.push(format!("page {p} changed by the power-failure pass"));
        }
    }
    v
}
