//! Synthetic workloads: fio-style sweeps and YCSB-like key-value mixes.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::store::PagedStore;

pub const DEFAULT_ZIPF_THETA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WriteOnly,
    ReadOnly,
    /// Reads with probability `read_fraction`.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Each `io_size` unit once, in a seeded random order, then reshuffled.
    UniformRandom,
    Sequential,
    /// Zipf-distributed page popularity with exponent `theta`.
    Zipf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub mode: Mode,
    pub read_fraction: f64,
    pub pattern: Pattern,
    pub theta: f64,
    pub io_size: usize,
    /// Operations across all threads. When absent, `duration * rate` ops
    /// are issued, or one full sweep of the store.
    pub total_ops: Option<u64>,
    /// Simulated seconds.
    pub duration: Option<f64>,
    pub threads: usize,
    pub seed: u64,
    /// Operations per simulated second.
    pub rate: f64,
    /// All threads share the whole store instead of disjoint slices.
    pub shared_range: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            mode: Mode::WriteOnly,
            read_fraction: 0.0,
            pattern: Pattern::UniformRandom,
            theta: DEFAULT_ZIPF_THETA,
            io_size: 64,
            total_ops: None,
            duration: None,
            threads: 1,
            seed: 0,
            rate: 10_000.0,
            shared_range: false,
        }
    }
}

/// A YCSB-like key-value mix: Zipf(0.99) record popularity, one cache line
/// per record access.
pub fn make_ycsb_like_mix(read_fraction: f64) -> Result<WorkloadSpec> {
    if !(0.0..=1.0).contains(&read_fraction) {
        return Err(Error::InvalidConfig(format!("read_fraction {read_fraction} outside [0, 1]")));
    }
    let mode = if read_fraction == 0.0 {
        Mode::WriteOnly
    } else if read_fraction == 1.0 {
        Mode::ReadOnly
    } else {
        Mode::Mixed
    };
    Ok(WorkloadSpec {
        mode,
        read_fraction,
        pattern: Pattern::Zipf,
        ..WorkloadSpec::default()
    })
}

impl WorkloadSpec {
    pub fn validate(&self, page_size: usize, cache_line: usize, num_pages: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.io_size == 0 || self.io_size % cache_line != 0 || self.io_size > page_size {
            return bad(format!(
                "io_size {} must be a multiple of cache_line {cache_line} no larger than page_size {page_size}",
                self.io_size
            ));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad(format!("read_fraction {} outside [0, 1]", self.read_fraction));
        }
        if self.pattern == Pattern::Zipf && !(self.theta > 0.0 && self.theta <= 1.2) {
            return bad(format!("zipf theta {} outside (0, 1.2]", self.theta));
        }
        if self.threads == 0 || (!self.shared_range && self.threads > num_pages) {
            return bad(format!("threads {} must be in [1, num_pages]", self.threads));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad(format!("rate {} must be positive", self.rate));
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d >= 0.0) {
                return bad(format!("duration {d} must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn read_probability(&self) -> f64 {
        match self.mode {
            Mode::WriteOnly => 0.0,
            Mode::ReadOnly => 1.0,
            Mode::Mixed => self.read_fraction,
        }
    }

    /// Page range worked on by `thread`.
    pub fn thread_range(&self, thread: usize, num_pages: usize) -> Range<usize> {
        if self.shared_range {
            return 0..num_pages;
        }
        let per = num_pages / self.threads;
        let extra = num_pages % self.threads;
        let start = thread * per + thread.min(extra);
        start..start + per + usize::from(thread < extra)
    }

    /// Total operations for a store of the given geometry.
    pub fn total_ops(&self, page_size: usize, num_pages: usize) -> u64 {
        match (self.total_ops, self.duration) {
            (Some(n), _) => n,
            (None, Some(d)) => (d * self.rate).round() as u64,
            (None, None) => (num_pages * (page_size / self.io_size)) as u64,
        }
    }

    /// Share of `total` done by `thread`.
    pub fn thread_ops(&self, thread: usize, total: u64) -> u64 {
        let t = self.threads as u64;
        total / t + u64::from((thread as u64) < total % t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Op {
    pub is_write: bool,
    pub page: usize,
    pub offset: usize,
    pub len: usize,
}

enum Picker {
    Sequential,
    Shuffled(Vec<u32>),
    Zipf { dist: Zipf<f64>, pages: Vec<u32> },
}

/// Deterministic operation generator for one thread.
pub struct OpStream {
    rng: ChaCha8Rng,
    picker: Picker,
    range: Range<usize>,
    units_per_page: usize,
    io_size: usize,
    read_probability: f64,
    issued: u64,
    remaining: u64,
}

impl OpStream {
    pub fn new(spec: &WorkloadSpec, page_size: usize, range: Range<usize>, thread: usize, ops: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(thread as u64);
        let units_per_page = page_size / spec.io_size;
        let pages = range.len();
        let picker = match spec.pattern {
            Pattern::Sequential => Picker::Sequential,
            Pattern::UniformRandom => {
                let mut units: Vec<u32> = (0..(pages * units_per_page) as u32).collect();
                units.shuffle(&mut rng);
                Picker::Shuffled(units)
            }
            Pattern::Zipf => {
                let mut order: Vec<u32> = (0..pages as u32).collect();
                order.shuffle(&mut rng);
                Picker::Zipf {
                    dist: Zipf::new(pages as f64, spec.theta).expect("validated zipf parameters"),
                    pages: order,
                }
            }
        };
        Self {
            rng,
            picker,
            range,
            units_per_page,
            io_size: spec.io_size,
            read_probability: spec.read_probability(),
            issued: 0,
            remaining: ops,
        }
    }

    fn next_unit(&mut self) -> usize {
        let total = (self.range.len() * self.units_per_page) as u64;
        match &mut self.picker {
            Picker::Sequential => (self.issued % total) as usize,
            Picker::Shuffled(units) => {
                let i = (self.issued % total) as usize;
                if i == 0 && self.issued > 0 {
                    units.shuffle(&mut self.rng);
                }
                units[i] as usize
            }
            Picker::Zipf { dist, pages } => {
                let rank = dist.sample(&mut self.rng) as usize;
                let page = pages[rank.clamp(1, pages.len()) - 1] as usize;
                page * self.units_per_page + self.rng.random_range(0..self.units_per_page)
            }
        }
    }
}

impl Iterator for OpStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.remaining == 0 {
            return None;
        }
        let unit = self.next_unit();
        let is_write = !(self.read_probability > 0.0 && self.rng.random::<f64>() < self.read_probability);
        self.remaining -= 1;
        self.issued += 1;
        Some(Op {
            is_write,
            page: self.range.start + unit / self.units_per_page,
            offset: (unit % self.units_per_page) * self.io_size,
            len: self.io_size,
        })
    }
}

/// Bytes written by the `n`-th write of a stream. Cheap, and distinct
/// enough that consecutive overwrites change the page.
pub fn write_payload(seed: u64, n: u64, len: usize) -> Vec<u8> {
    let x = seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    (0..len).map(|i| (x >> ((i % 8) * 8)) as u8 ^ i as u8).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreadStats {
    pub ops: u64,
    pub simulated_seconds: f64,
    pub ops_per_second: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub ops: u64,
    pub reads: u64,
    pub writes: u64,
    pub bytes_written: u64,
    pub distinct_pages_written: u64,
    pub threads: Vec<ThreadStats>,
}

impl WorkloadStats {
    pub fn ops_per_second(&self) -> f64 {
        self.threads.iter().map(|t| t.ops_per_second).sum()
    }
}

/// Accumulates per-op counters.
#[derive(Debug, Default)]
pub(crate) struct Tally {
    pub ops: u64,
    pub reads: u64,
    pub writes: u64,
    pub bytes_written: u64,
    pub seconds: f64,
    pub pages: HashSet<usize>,
}

impl Tally {
    pub fn note(&mut self, op: &Op, cost: &CostModel, cache_line: usize) {
        self.ops += 1;
        self.seconds += cost.op_seconds(op.is_write, op.len, cache_line);
        if op.is_write {
            self.writes += 1;
            self.bytes_written += op.len as u64;
            self.pages.insert(op.page);
        } else {
            self.reads += 1;
        }
    }

    pub fn thread_stats(&self) -> ThreadStats {
        ThreadStats {
            ops: self.ops,
            simulated_seconds: self.seconds,
            ops_per_second: if self.seconds > 0.0 { self.ops as f64 / self.seconds } else { 0.0 },
        }
    }
}

pub(crate) fn merge(tallies: &[Tally]) -> WorkloadStats {
    let mut pages = HashSet::new();
    let mut s = WorkloadStats::default();
    for t in tallies {
        s.ops += t.ops;
        s.reads += t.reads;
        s.writes += t.writes;
        s.bytes_written += t.bytes_written;
        pages.extend(t.pages.iter().copied());
        s.threads.push(t.thread_stats());
    }
    s.distinct_pages_written = pages.len() as u64;
    s
}

/// Runs the workload to completion on `spec.threads` OS threads.
pub fn run_workload(store: &PagedStore, spec: &WorkloadSpec, cost: &CostModel) -> Result<WorkloadStats> {
    let cfg = *store.config();
    spec.validate(cfg.page_size, cfg.cache_line, cfg.num_pages)?;
    let total = spec.total_ops(cfg.page_size, cfg.num_pages);
    let tallies = std::thread::scope(|s| {
        let handles: Vec<_> = (0..spec.threads)
            .map(|t| {
                s.spawn(move || -> Result<Tally> {
                    let ops = spec.thread_ops(t, total);
                    let mut tally = Tally::default();
                    for op in OpStream::new(spec, cfg.page_size, spec.thread_range(t, cfg.num_pages), t, ops) {
                        if op.is_write {
                            store.write(op.page, op.offset, &write_payload(spec.seed, tally.writes, op.len))?;
                        } else {
                            store.read(op.page, op.offset, op.len)?;
                        }
                        tally.note(&op, cost, cfg.cache_line);
                    }
                    Ok(tally)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("workload thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(merge(&tallies))
}
