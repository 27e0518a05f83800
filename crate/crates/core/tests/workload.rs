use std::collections::HashMap;

use asyred::config::ExperimentConfig;
use asyred::cost::CostModel;
use asyred::experiment;
use asyred::store::{PagedStore, StoreConfig};
use asyred::workload::{make_ycsb_like_mix, run_workload, OpStream, Pattern, WorkloadSpec};

#[test]
fn zipf_top_page_is_hot() {
    let pages = 10_000;
    let spec = WorkloadSpec {
        pattern: Pattern::Zipf,
        seed: 4,
        ..WorkloadSpec::default()
    };
    let ops = 100_000;
    let mut freq: HashMap<usize, u64> = HashMap::new();
    for op in OpStream::new(&spec, 4096, 0..pages, 0, ops) {
        *freq.entry(op.page).or_default() += 1;
    }
    let top = *freq.values().max().unwrap() as f64;
    let uniform = ops as f64 / pages as f64;
    assert!(top >= 10.0 * uniform, "top page seen {top} times, uniform {uniform}");
    // Analytic mass of rank 1: 1 / H(n, theta).
    let h: f64 = (1..=pages).map(|k| (k as f64).powf(-spec.theta)).sum();
    let expected = ops as f64 / h;
    assert!((top - expected).abs() < 0.1 * expected, "top {top}, expected {expected:.0}");
}

#[test]
fn determinism_of_distinct_pages() {
    let spec = WorkloadSpec {
        pattern: Pattern::Zipf,
        total_ops: Some(5000),
        threads: 3,
        seed: 8,
        ..WorkloadSpec::default()
    };
    let run = || {
        let st = PagedStore::new(StoreConfig::with_pages(300)).unwrap();
        let stats = run_workload(&st, &spec, &CostModel::default()).unwrap();
        (stats, st.dirty_pages())
    };
    assert_eq!(run(), run());
}

#[test]
fn ycsb_read_only_dirties_nothing() {
    let mut c = ExperimentConfig::default();
    c.store.num_pages = 512;
    c.workload = WorkloadSpec {
        total_ops: Some(20_000),
        ..make_ycsb_like_mix(1.0).unwrap()
    };
    let r = experiment::run(&c).unwrap();
    assert_eq!(r.workload.writes, 0);
    assert_eq!(r.pages_checksummed, 0);
    assert_eq!(r.mttdl.v_avg, 0.0);
    assert_eq!(r.mttdl.improvement_factor, None);
}

fn checksums_per_page(pattern: Pattern) -> f64 {
    let mut c = ExperimentConfig::default();
    c.store.num_pages = 1024;
    c.updater.period = 1.0;
    c.workload = WorkloadSpec {
        pattern,
        total_ops: Some(65_536),
        rate: 4096.0,
        seed: 2,
        ..WorkloadSpec::default()
    };
    experiment::run(&c).unwrap().checksums_per_written_page
}

#[test]
fn sequential_amortizes_best() {
    let seq = checksums_per_page(Pattern::Sequential);
    let zipf = checksums_per_page(Pattern::Zipf);
    let uniform = checksums_per_page(Pattern::UniformRandom);
    assert!(seq < zipf && zipf < uniform, "sequential {seq}, zipf {zipf}, uniform {uniform}");
    assert!(seq <= 2.0);
}
