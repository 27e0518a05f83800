mod common;

use asyred::config::ExperimentConfig;
use asyred::redundancy::{compute_parity, crc32c, crc32c_append, reconstruct, RedundancyRegion, StripeConfig};
use asyred::reliability::{improvement_factor, mttdl_no_redundancy, mttdl_with_redundancy, MttdlInputs};
use asyred::store::{walk_steps, DirtyBitvector, PagedStore, StoreConfig};
use asyred::updater::{run_one_pass, ShadowState};
use asyred::workload::{OpStream, Pattern, WorkloadSpec};
use common::*;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn small_store(pages: usize, batch: usize) -> PagedStore {
    PagedStore::new(StoreConfig {
        page_size: 128,
        cache_line: 64,
        num_pages: pages,
        batch_size: batch,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn crc_matches_reference(data in proptest::collection::vec(any::<u8>(), 0..3000)) {
        prop_assert_eq!(crc32c(&data), crc_oracle(&data));
    }

    #[test]
    fn crc_append_composes(data in proptest::collection::vec(any::<u8>(), 0..600), cut in 0usize..600) {
        let cut = cut.min(data.len());
        prop_assert_eq!(crc32c_append(crc32c(&data[..cut]), &data[cut..]), crc32c(&data));
    }

    #[test]
    fn parity_rebuilds_any_single_page(
        pages in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 64), 1..6),
        lost in 0usize..6,
    ) {
        let lost = lost % pages.len();
        let parity = compute_parity(&pages);
        prop_assert_eq!(&parity, &xor_oracle(&pages, 64));
        let survivors: Vec<_> = pages.iter().enumerate().filter(|(i, _)| *i != lost).map(|(_, p)| p.clone()).collect();
        prop_assert_eq!(&reconstruct(&parity, &survivors), &pages[lost]);
    }

    #[test]
    fn walk_steps_count_distinct_nodes(start in 0usize..2_000_000, len in 0usize..3000) {
        let end = start + len;
        let oracle: u64 = (1..=4u32)
            .map(|l| (start..end).map(|p| p as u64 / 512u64.pow(l)).collect::<BTreeSet<_>>().len() as u64)
            .sum();
        prop_assert_eq!(walk_steps(start, end), oracle);
    }

    /// Clearing with a snapshot mask never loses a bit set after the
    /// snapshot, and reports exactly the bits it reset.
    #[test]
    fn conditional_clear_keeps_later_writes(
        before in proptest::collection::btree_set(0usize..40, 0..20),
        after in proptest::collection::btree_set(0usize..40, 0..20),
    ) {
        let st = small_store(40, 40);
        for &p in &before {
            st.write(p, 0, &[1; 64]).unwrap();
        }
        let mask = st.get_dirty_bits(0, 40).unwrap();
        prop_assert_eq!(mask.pages().collect::<BTreeSet<_>>(), before.clone());
        for &p in &after {
            st.write(p, 64, &[2; 64]).unwrap();
        }
        let cleared = st.clear_dirty_bits(0, 40, &mask).unwrap();
        prop_assert_eq!(cleared as usize, before.len());
        let expect: Vec<usize> = after.difference(&before).copied().collect();
        prop_assert_eq!(st.dirty_pages(), expect);
    }

    #[test]
    fn mask_only_clears_its_own_range(pages in proptest::collection::btree_set(0usize..64, 1..30), start in 0usize..48) {
        let st = small_store(64, 16);
        for &p in &pages {
            st.write(p, 0, &[1; 64]).unwrap();
        }
        let mask = st.get_dirty_bits(start, start + 16).unwrap();
        st.clear_dirty_bits(start, start + 16, &mask).unwrap();
        let expect: Vec<usize> = pages.iter().copied().filter(|p| !(start..start + 16).contains(p)).collect();
        prop_assert_eq!(st.dirty_pages(), expect);
    }

    #[test]
    fn any_write_sequence_converges_after_one_pass(
        writes in proptest::collection::vec((0usize..20, 0usize..2, any::<u8>()), 0..80),
        batch in 1usize..=20,
        d in 1usize..=6,
    ) {
        let st = small_store(20, batch);
        let region = RedundancyRegion::initialize(&st, StripeConfig::new(d)).unwrap();
        let shadow = ShadowState::new(batch);
        for (p, line, b) in writes {
            st.write(p, line * 64, &[b; 64]).unwrap();
        }
        run_one_pass(&st, &region, &shadow).unwrap();
        prop_assert_eq!(convergence_violations(&st, &region, &shadow), Vec::<String>::new());
    }

    #[test]
    fn random_schedules_are_safe(seed in any::<u64>(), pages in 2usize..8) {
        let params = ScheduleParams { steps: 120, weights: [3, 4, 3, 1], ..ScheduleParams::race(pages) };
        let mut out = ScheduleOutcome::default();
        run_schedule(seed, &params, &mut out);
        prop_assert!(out.violations.is_empty(), "{:?}", out.violations);
    }

    #[test]
    fn store_image_round_trips(writes in proptest::collection::vec((0usize..9, 0usize..2, any::<u8>()), 0..30)) {
        let st = small_store(9, 3);
        for (p, line, b) in &writes {
            st.write(*p, line * 64, &[*b; 64]).unwrap();
        }
        let mut buf = Vec::new();
        st.write_image(&mut buf).unwrap();
        let back = PagedStore::read_image(&mut buf.as_slice(), *st.config()).unwrap();
        for p in 0..9 {
            prop_assert_eq!(back.read_page(p).unwrap(), st.read_page(p).unwrap());
        }
        prop_assert_eq!(back.dirty_pages(), st.dirty_pages());
    }

    #[test]
    fn region_image_round_trips(writes in proptest::collection::vec((0usize..9, any::<u8>()), 0..30), d in 1usize..5) {
        let st = small_store(9, 3);
        for (p, b) in &writes {
            st.write(*p, 0, &[*b; 64]).unwrap();
        }
        let region = RedundancyRegion::initialize(&st, StripeConfig::new(d)).unwrap();
        let mut buf = Vec::new();
        region.write_image(&mut buf).unwrap();
        let back = RedundancyRegion::read_image(&mut buf.as_slice(), 128).unwrap();
        prop_assert_eq!(back.checksum_bytes(), region.checksum_bytes());
        prop_assert_eq!(back.meta_checksum(), region.meta_checksum());
        for s in 0..region.num_stripes() {
            prop_assert_eq!(back.parity_page(s), region.parity_page(s));
        }
    }

    #[test]
    fn improvement_is_the_mttdl_ratio(p in 1u64..100_000, n in 1u64..16, frac in 0.0f64..=1.0) {
        let v = frac * p.div_ceil(n) as f64;
        let inputs = MttdlInputs { mttf_page: 1e6, total_pages: p, pages_per_stripe: n, vulnerable_stripes: v };
        match improvement_factor(&inputs).unwrap() {
            None => prop_assert_eq!(v, 0.0),
            Some(f) => {
                let ratio = mttdl_with_redundancy(&inputs).unwrap().unwrap() / mttdl_no_redundancy(&inputs).unwrap();
                prop_assert!((f - ratio).abs() <= 1e-12 * ratio);
                prop_assert!((f - p as f64 / (v * n as f64)).abs() <= 1e-9 * f);
            }
        }
    }

    #[test]
    fn op_streams_are_deterministic_and_in_range(seed in any::<u64>(), lo in 0usize..50, len in 1usize..50, zipf in any::<bool>()) {
        let spec = WorkloadSpec {
            seed,
            pattern: if zipf { Pattern::Zipf } else { Pattern::UniformRandom },
            ..WorkloadSpec::default()
        };
        let a: Vec<_> = OpStream::new(&spec, 4096, lo..lo + len, 0, 300).collect();
        let b: Vec<_> = OpStream::new(&spec, 4096, lo..lo + len, 0, 300).collect();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|o| (lo..lo + len).contains(&o.page) && o.offset % 64 == 0 && o.offset < 4096));
    }

    #[test]
    fn thread_ranges_partition(pages in 1usize..500, threads in 1usize..16) {
        prop_assume!(threads <= pages);
        let spec = WorkloadSpec { threads, ..WorkloadSpec::default() };
        let mut next = 0;
        for t in 0..threads {
            let r = spec.thread_range(t, pages);
            prop_assert_eq!(r.start, next);
            prop_assert!(!r.is_empty());
            next = r.end;
        }
        prop_assert_eq!(next, pages);
    }

    #[test]
    fn env_overrides_reach_the_config(batch in 1usize..64, period in 0.1f64..100.0) {
        let mut c = ExperimentConfig::default();
        c.apply_env([
            ("ASYRED_STORE_BATCH_SIZE".to_string(), batch.to_string()),
            ("ASYRED_UPDATER_PERIOD".to_string(), period.to_string()),
        ]).unwrap();
        prop_assert_eq!(c.store.batch_size, batch);
        prop_assert_eq!(c.updater.period, period);
    }

    #[test]
    fn dirty_bitvector_display_matches_bits(pages in proptest::collection::btree_set(0usize..70, 0..70)) {
        let v = DirtyBitvector::from_pages(0, 70, pages.iter().copied());
        let s = v.to_string();
        prop_assert_eq!(s.len(), 70);
        for (i, c) in s.chars().enumerate() {
            prop_assert_eq!(c == '1', pages.contains(&i));
        }
        prop_assert_eq!(v.count_ones(), pages.len());
    }
}
