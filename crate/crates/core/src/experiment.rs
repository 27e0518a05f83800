//! Runs a configured scenario end to end and produces a [`RunReport`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::config::{ExperimentConfig, RunMode};
use crate::error::Result;
use crate::faults::{
    inject_bit_flip, inject_lost_write, inject_misdirected, inject_rest_corruption, seeded_bytes,
    simulate_power_failure, BatteryReport, FaultEvent, FaultKind, FaultTrigger,
};
use crate::redundancy::{verify_convergence, RedundancyRegion};
use crate::reliability::{sample_vulnerable_stripes, MttdlReport, VulnerabilitySampler};
use crate::report::{outcome_counts, BatterySource, PassRecord, RunReport};
use crate::scrubber::{CorruptionReport, RecoveryOutcome, ScrubReport, Scrubber};
use crate::store::{DirtyBitOps, PagedStore};
use crate::updater::{recover_shadow, PassCursor, PassStats, PeriodicUpdater, ShadowState, StopSignal, SystemClock};
use crate::workload::{merge, write_payload, OpStream, Tally, WorkloadStats};

/// Validates `cfg` and runs it in the configured mode.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    match cfg.run.mode {
        RunMode::Simulated => Simulation::new(cfg)?.run(),
        RunMode::Threaded => run_threaded(cfg),
    }
}

struct Harness {
    cfg: ExperimentConfig,
    store: PagedStore,
    region: RedundancyRegion,
    shadow: ShadowState,
    scrubber: Scrubber,
    sampler: VulnerabilitySampler,
    passes: Vec<PassRecord>,
    corruptions: Vec<CorruptionReport>,
    last_outcome: BTreeMap<usize, RecoveryOutcome>,
}

impl Harness {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let store = PagedStore::new(cfg.store_config())?;
        let region = RedundancyRegion::initialize(&store, cfg.stripe_config())?;
        Ok(Self {
            shadow: ShadowState::new(cfg.store.batch_size),
            cfg: cfg.clone(),
            store,
            region,
            scrubber: Scrubber::new(),
            sampler: VulnerabilitySampler::default(),
            passes: Vec::new(),
            corruptions: Vec::new(),
            last_outcome: BTreeMap::new(),
        })
    }

    fn sample(&self) -> usize {
        sample_vulnerable_stripes(&self.store, &self.shadow, self.region.stripes())
    }

    fn record_pass(&mut self, time: f64, stats: &PassStats, ops: &DirtyBitOps) {
        self.passes.push(PassRecord {
            index: self.passes.len() as u64 + 1,
            time,
            batches: stats.batches,
            dirty_pages_seen: stats.dirty_pages_seen,
            pages_checksummed: stats.pages_checksummed,
            stripes_reparitied: stats.stripes_reparitied,
            syscalls: ops.syscalls(),
            walk_steps: ops.walk_steps,
            tlb_invalidations: ops.tlb_invalidations,
            simulated_seconds: self.cfg.cost.pass_seconds(stats, ops),
        });
    }

    fn pass(&mut self, time: f64) -> Result<()> {
        let before = self.store.dirty_bit_ops();
        let stats = PassCursor::new(&self.store, &self.region, &self.shadow).run()?;
        let ops = self.store.dirty_bit_ops().since(&before);
        self.record_pass(time, &stats, &ops);
        Ok(())
    }

    /// Keeps a report unless it repeats the unrecoverable verdict already
    /// recorded for the page.
    fn absorb_scrub(&mut self, report: ScrubReport) {
        for r in report.reports {
            let outcome = r.outcome.expect("recovery attempted");
            let repeat = outcome != RecoveryOutcome::Recovered && self.last_outcome.get(&r.page) == Some(&outcome);
            self.last_outcome.insert(r.page, outcome);
            if !repeat {
                self.corruptions.push(r);
            }
        }
    }

    fn scrub(&mut self) {
        let report = self.scrubber.scrub_and_recover(&self.store, &self.region, &self.shadow);
        self.absorb_scrub(report);
    }

    /// Writers have stopped: complete any interrupted batch, catch
    /// corruption of clean pages, bring redundancy up to date and scrub.
    fn settle(&mut self, time: f64) -> Result<()> {
        self.store.destage_all();
        recover_shadow(&self.store, &self.region, &self.shadow, None)?;
        self.scrub();
        self.pass(time)?;
        self.scrub();
        Ok(())
    }

    fn into_report(
        self,
        workload: WorkloadStats,
        golden: Option<&[u8]>,
        silent_read_corruptions: u64,
        battery: Option<BatteryReport>,
        run_seconds: f64,
    ) -> Result<RunReport> {
        let page_size = self.store.page_size();
        let mut silent = 0;
        if let Some(golden) = golden {
            for page in 0..self.store.num_pages() {
                let intact = self
                    .store
                    .with_page(page, |b| b == &golden[page * page_size..(page + 1) * page_size])?;
                let detected = matches!(
                    self.last_outcome.get(&page),
                    Some(RecoveryOutcome::Unrecoverable | RecoveryOutcome::UnrecoverableDirtyStripe)
                );
                if !intact && !detected {
                    silent += 1;
                }
            }
        }
        let (recovered, unrecoverable) = outcome_counts(&self.corruptions);
        let pages_checksummed = self.passes.iter().map(|p| p.pages_checksummed).sum::<u64>();
        let pass_seconds = self.passes.iter().map(|p| p.simulated_seconds).sum();
        let worst = self.passes.iter().map(|p| p.simulated_seconds).fold(0.0, f64::max);
        let (battery, battery_source) = match battery {
            Some(b) => (b, BatterySource::PowerFailure),
            None => (self.cfg.battery.report_for(worst), BatterySource::WorstPass),
        };
        let mttdl = MttdlReport::new(
            self.cfg.run.mttf_page_hours,
            self.store.num_pages(),
            self.region.stripes(),
            &self.sampler,
        )?;
        Ok(RunReport {
            checksums_per_written_page: if workload.distinct_pages_written == 0 {
                0.0
            } else {
                pages_checksummed as f64 / workload.distinct_pages_written as f64
            },
            converged: verify_convergence(&self.store, &self.region).is_converged(),
            config: self.cfg,
            stripes_reparitied: self.passes.iter().map(|p| p.stripes_reparitied).sum(),
            pages_checksummed,
            pass_seconds,
            passes: self.passes,
            workload,
            corruptions: self.corruptions,
            scrub_passes: self.scrubber.passes(),
            recovered,
            unrecoverable,
            silent_corruptions: silent,
            silent_read_corruptions,
            halted: self.scrubber.halted(),
            power_failed: battery_source == BatterySource::PowerFailure,
            mttdl,
            battery,
            battery_source,
            dirty_bit_ops: self.store.dirty_bit_ops(),
            run_seconds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Fault(usize),
    Sample,
    Pass,
    PowerFailure,
}

/// Deterministic single-threaded run on a simulated timeline. Operation `i`
/// arrives at `i / rate` seconds and is issued by thread `i % threads`.
/// Events due at or before an operation's arrival happen first; at equal
/// times faults precede samples, samples precede passes.
struct Simulation {
    h: Harness,
    golden: Vec<u8>,
    streams: Vec<OpStream>,
    tallies: Vec<Tally>,
    total_ops: u64,
    horizon: f64,
    events: Vec<(f64, Event)>,
    lost_after_pass: Vec<usize>,
    silent_reads: u64,
    battery: Option<BatteryReport>,
}

impl Simulation {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let h = Harness::new(cfg)?;
        let spec = cfg.workload;
        let store = cfg.store_config();
        let total_ops = spec.total_ops(store.page_size, store.num_pages);
        let horizon = spec.duration.unwrap_or(total_ops as f64 / spec.rate);
        let streams = (0..spec.threads)
            .map(|t| {
                OpStream::new(
                    &spec,
                    store.page_size,
                    spec.thread_range(t, store.num_pages),
                    t,
                    spec.thread_ops(t, total_ops),
                )
            })
            .collect();

        let mut events = Vec::new();
        let period = cfg.updater.period;
        for k in 1.. {
            let t = k as f64 * period;
            if t > horizon {
                break;
            }
            events.push((t, Event::Pass));
        }
        let n_samples = (horizon * cfg.run.samples_per_second).ceil() as u64;
        for j in 0..n_samples.max(1) {
            events.push((j as f64 / cfg.run.samples_per_second, Event::Sample));
        }
        for (i, f) in cfg.faults.iter().enumerate() {
            events.push((f.at.min(horizon), Event::Fault(i)));
        }
        if let Some(t) = cfg.run.power_failure_at.filter(|&t| t <= horizon) {
            events.push((t, Event::PowerFailure));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        Ok(Self {
            golden: vec![0; store.page_size * store.num_pages],
            tallies: (0..spec.threads).map(|_| Tally::default()).collect(),
            h,
            streams,
            total_ops,
            horizon,
            events,
            lost_after_pass: Vec::new(),
            silent_reads: 0,
            battery: None,
        })
    }

    fn golden_write(&mut self, page: usize, offset: usize, bytes: &[u8]) {
        let at = page * self.h.store.page_size() + offset;
        self.golden[at..at + bytes.len()].copy_from_slice(bytes);
    }

    fn fault(&mut self, f: FaultEvent) -> Result<()> {
        let line = self.h.store.config().cache_line;
        let store = &self.h.store;
        match f.kind {
            FaultKind::LostWrite => {
                let payload = seeded_bytes(f.payload_seed, line);
                store.stage_write(f.target_page, 0, &payload)?;
                self.golden_write(f.target_page, 0, &payload);
                if f.trigger == FaultTrigger::BeforeRedundancyUpdate {
                    inject_lost_write(&self.h.store, f.target_page);
                } else {
                    self.lost_after_pass.push(f.target_page);
                }
            }
            FaultKind::RestCorruption => inject_rest_corruption(store, f.target_page, f.payload_seed)?,
            FaultKind::BitFlip => {
                inject_bit_flip(store, f.target_page, f.payload_seed)?;
            }
            FaultKind::MisdirectedWrite => {
                let payload = seeded_bytes(f.payload_seed, line);
                let aux = f.aux_page.expect("validated");
                inject_misdirected(store, f.kind, f.target_page, aux, 0, &payload)?;
                self.golden_write(f.target_page, 0, &payload);
            }
            FaultKind::MisdirectedRead => {
                let aux = f.aux_page.expect("validated");
                let got = inject_misdirected(store, f.kind, f.target_page, aux, 0, &vec![0; line])?
                    .expect("reads return bytes");
                let at = f.target_page * store.page_size();
                if got[..] != self.golden[at..at + line] {
                    self.silent_reads += 1;
                }
            }
        }
        Ok(())
    }

    fn pass(&mut self, time: f64) -> Result<()> {
        let v = self.h.sample();
        self.h.sampler.record_prepass(v);
        self.h.pass(time)?;
        for page in self.lost_after_pass.drain(..) {
            inject_lost_write(&self.h.store, page);
        }
        if self.h.passes.len() as u64 % self.h.cfg.updater.scrub_every == 0 {
            self.h.scrub();
        }
        Ok(())
    }

    /// Returns false once power has failed.
    fn event(&mut self, time: f64, event: Event) -> Result<bool> {
        match event {
            Event::Fault(i) => self.fault(self.h.cfg.faults[i])?,
            Event::Sample => {
                let v = self.h.sample();
                self.h.sampler.record(v);
            }
            Event::Pass => self.pass(time)?,
            Event::PowerFailure => {
                self.lost_after_pass.clear();
                let h = &self.h;
                self.battery = Some(simulate_power_failure(
                    &h.store,
                    &h.region,
                    &h.shadow,
                    &h.cfg.battery,
                    &h.cfg.cost,
                )?);
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn op(&mut self, i: u64) -> Result<()> {
        let t = (i % self.streams.len() as u64) as usize;
        let op = self.streams[t].next().expect("stream sized to its share");
        let line = self.h.store.config().cache_line;
        if op.is_write {
            let seed = self.h.cfg.workload.seed ^ ((t as u64) << 48);
            let bytes = write_payload(seed, self.tallies[t].writes, op.len);
            self.h.store.write(op.page, op.offset, &bytes)?;
            self.golden_write(op.page, op.offset, &bytes);
        } else {
            self.h.store.read(op.page, op.offset, op.len)?;
        }
        self.tallies[t].note(&op, &self.h.cfg.cost, line);
        Ok(())
    }

    fn run(mut self) -> Result<RunReport> {
        let rate = self.h.cfg.workload.rate;
        let events = std::mem::take(&mut self.events);
        let mut next = 0;
        let mut end = self.horizon;
        let mut powered = true;
        'ops: for i in 0..self.total_ops {
            let arrival = i as f64 / rate;
            while next < events.len() && events[next].0 <= arrival {
                let (t, e) = events[next];
                next += 1;
                if !self.event(t, e)? {
                    end = t;
                    powered = false;
                    break 'ops;
                }
            }
            self.op(i)?;
        }
        if powered {
            for &(t, e) in &events[next..] {
                if !self.event(t, e)? {
                    end = t;
                    break;
                }
            }
        }
        if !self.lost_after_pass.is_empty() {
            self.pass(end)?;
        }
        self.h.settle(end)?;
        let workload = merge(&self.tallies);
        let golden = std::mem::take(&mut self.golden);
        self.h
            .into_report(workload, Some(&golden), self.silent_reads, self.battery, end)
    }
}

/// Real threads: paced workload threads, a periodic updater, a scrubber
/// and a sampler, all on the wall clock.
fn run_threaded(cfg: &ExperimentConfig) -> Result<RunReport> {
    let h = Harness::new(cfg)?;
    let spec = cfg.workload;
    let store_cfg = cfg.store_config();
    let total = spec.total_ops(store_cfg.page_size, store_cfg.num_pages);
    let stop = StopSignal::new();
    let exclusive = Mutex::new(());
    let clock = SystemClock::new();
    let passes = Mutex::new(Vec::new());
    let scrubs = Mutex::new(Vec::new());
    let sampler = Mutex::new(VulnerabilitySampler::default());
    let started = Instant::now();

    let tallies = std::thread::scope(|s| -> Result<Vec<Tally>> {
        let (store, region, shadow, scrubber) = (&h.store, &h.region, &h.shadow, &h.scrubber);
        let (stop, exclusive, clock, passes, scrubs, sampler) = (&stop, &exclusive, &clock, &passes, &scrubs, &sampler);
        let updater = s.spawn(move || {
            let mut up = PeriodicUpdater::new(cfg.updater_config())?;
            if !cfg.updater.concurrent_scrub {
                up = up.exclusive_with(exclusive);
            }
            let mut before = store.dirty_bit_ops();
            up.run(store, region, shadow, clock, stop, |t, stats| {
                let now = store.dirty_bit_ops();
                passes.lock().push((t.as_secs_f64(), stats, now.since(&before)));
                before = now;
            })
        });
        let scrub_period = cfg.updater_config().period() * cfg.updater.scrub_every as u32;
        s.spawn(move || {
            while !stop.wait_timeout(scrub_period) {
                let _guard = (!cfg.updater.concurrent_scrub).then(|| exclusive.lock());
                scrubs.lock().push(scrubber.scrub_and_recover(store, region, shadow));
            }
        });
        let sample_every = Duration::from_secs_f64(1.0 / cfg.run.samples_per_second);
        s.spawn(move || loop {
            let v = sample_vulnerable_stripes(store, shadow, region.stripes());
            sampler.lock().record(v);
            if stop.wait_timeout(sample_every) {
                break;
            }
        });
        let workers: Vec<_> = (0..spec.threads)
            .map(|t| {
                s.spawn(move || -> Result<Tally> {
                    let ops = spec.thread_ops(t, total);
                    let interval = spec.threads as f64 / spec.rate;
                    let range = spec.thread_range(t, store_cfg.num_pages);
                    let mut tally = Tally::default();
                    for (j, op) in OpStream::new(&spec, store_cfg.page_size, range, t, ops).enumerate() {
                        let due = Duration::from_secs_f64(j as f64 * interval);
                        let elapsed = started.elapsed();
                        if due > elapsed + Duration::from_millis(1) {
                            std::thread::sleep(due - elapsed);
                        }
                        if op.is_write {
                            let bytes = write_payload(spec.seed ^ ((t as u64) << 48), tally.writes, op.len);
                            store.write(op.page, op.offset, &bytes)?;
                        } else {
                            store.read(op.page, op.offset, op.len)?;
                        }
                        tally.note(&op, &cfg.cost, store_cfg.cache_line);
                    }
                    Ok(tally)
                })
            })
            .collect();
        let tallies: Result<Vec<_>> = workers
            .into_iter()
            .map(|w| w.join().expect("workload thread panicked"))
            .collect();
        if let Some(d) = spec.duration {
            let rest = Duration::from_secs_f64(d).saturating_sub(started.elapsed());
            if !rest.is_zero() {
                stop.wait_timeout(rest);
            }
        }
        stop.raise();
        updater.join().expect("updater thread panicked")?;
        tallies
    })?;

    let mut h = h;
    for (t, stats, ops) in passes.into_inner() {
        h.record_pass(t, &stats, &ops);
    }
    for r in scrubs.into_inner() {
        h.absorb_scrub(r);
    }
    h.sampler = sampler.into_inner();
    let end = started.elapsed().as_secs_f64();
    h.settle(end)?;
    h.into_report(merge(&tallies), None, 0, None, end)
}
