//! Run reports and their JSON/CSV files.
//!
//! `summary.csv` and `sweep.csv` share the columns in [`SUMMARY_COLUMNS`],
//! `sweep.csv` prefixed by `param,value`. `passes.csv` has one row per
//! updater pass and `corruptions.csv` one row per corruption report.

use std::fs::{self, File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::faults::BatteryReport;
use crate::reliability::MttdlReport;
use crate::scrubber::{CorruptionReport, RecoveryOutcome};
use crate::store::DirtyBitOps;
use crate::workload::WorkloadStats;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CORRUPTION: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PassRecord {
    pub index: u64,
    /// Run time at which the pass started, in seconds.
    pub time: f64,
    pub batches: u64,
    pub dirty_pages_seen: u64,
    pub pages_checksummed: u64,
    pub stripes_reparitied: u64,
    pub syscalls: u64,
    pub walk_steps: u64,
    pub tlb_invalidations: u64,
    pub simulated_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatterySource {
    /// Measured by the pass run at the configured power failure.
    PowerFailure,
    /// Priced from the slowest pass of the run.
    WorstPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub passes: Vec<PassRecord>,
    pub workload: WorkloadStats,
    pub corruptions: Vec<CorruptionReport>,
    pub scrub_passes: u64,
    pub recovered: u64,
    pub unrecoverable: u64,
    /// Pages whose final content differs from what the application wrote
    /// without an unrecoverable report.
    pub silent_corruptions: u64,
    /// Misdirected reads that returned wrong bytes.
    pub silent_read_corruptions: u64,
    pub halted: bool,
    pub power_failed: bool,
    pub mttdl: MttdlReport,
    pub battery: BatteryReport,
    pub battery_source: BatterySource,
    pub dirty_bit_ops: DirtyBitOps,
    pub pages_checksummed: u64,
    pub stripes_reparitied: u64,
    pub pass_seconds: f64,
    /// Checksum computations per distinct page written.
    pub checksums_per_written_page: f64,
    /// Every page clean with exact redundancy at the end of the run.
    pub converged: bool,
    /// Length of the run in (simulated or wall) seconds.
    pub run_seconds: f64,
}

pub const SUMMARY_COLUMNS: [&str; 37] = [
    "num_pages",
    "batch_size",
    "pages_per_stripe",
    "period",
    "threads",
    "seed",
    "run_seconds",
    "passes",
    "ops",
    "writes",
    "distinct_pages_written",
    "pages_checksummed",
    "stripes_reparitied",
    "checksums_per_written_page",
    "get_dirty_bits_calls",
    "clear_dirty_bits_calls",
    "syscalls",
    "walk_steps",
    "tlb_invalidations",
    "bits_read",
    "bits_reset",
    "pass_seconds",
    "v_avg",
    "v_prepass_avg",
    "mttdl_no_redundancy_hours",
    "mttdl_with_redundancy_hours",
    "improvement_factor",
    "battery_pass_seconds",
    "battery_energy_kj",
    "battery_ultracap_usd",
    "battery_liion_usd",
    "corruption_reports",
    "recovered",
    "unrecoverable",
    "silent_corruptions",
    "halted",
    "exit_code",
];

pub const PASS_COLUMNS: [&str; 10] = [
    "index",
    "time",
    "batches",
    "dirty_pages_seen",
    "pages_checksummed",
    "stripes_reparitied",
    "syscalls",
    "walk_steps",
    "tlb_invalidations",
    "simulated_seconds",
];

pub const CORRUPTION_COLUMNS: [&str; 4] = ["pass", "page", "stripe", "outcome"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| x.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

impl RunReport {
    pub fn silent_total(&self) -> u64 {
        self.silent_corruptions + self.silent_read_corruptions
    }

    /// 2 when any corruption was silent or unrecoverable, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.unrecoverable > 0 || self.silent_total() > 0 {
            EXIT_CORRUPTION
        } else {
            EXIT_CLEAN
        }
    }

    pub fn summary_row(&self) -> Vec<String> {
        let c = &self.config;
        let ops = &self.dirty_bit_ops;
        vec![
            c.store.num_pages.to_string(),
            c.store.batch_size.to_string(),
            self.mttdl.pages_per_stripe.to_string(),
            c.updater.period.to_string(),
            c.workload.threads.to_string(),
            c.workload.seed.to_string(),
            self.run_seconds.to_string(),
            self.passes.len().to_string(),
            self.workload.ops.to_string(),
            self.workload.writes.to_string(),
            self.workload.distinct_pages_written.to_string(),
            self.pages_checksummed.to_string(),
            self.stripes_reparitied.to_string(),
            self.checksums_per_written_page.to_string(),
            ops.get_calls.to_string(),
            ops.clear_calls.to_string(),
            ops.syscalls().to_string(),
            ops.walk_steps.to_string(),
            ops.tlb_invalidations.to_string(),
            ops.bits_read.to_string(),
            ops.bits_reset.to_string(),
            self.pass_seconds.to_string(),
            self.mttdl.v_avg.to_string(),
            self.mttdl.v_prepass_avg.to_string(),
            self.mttdl.mttdl_no_redundancy_hours.to_string(),
            opt(self.mttdl.mttdl_with_redundancy_hours),
            opt(self.mttdl.improvement_factor),
            self.battery.pass_seconds.to_string(),
            self.battery.energy_kj.to_string(),
            self.battery.ultracap_usd.to_string(),
            self.battery.liion_usd.to_string(),
            self.corruptions.len().to_string(),
            self.recovered.to_string(),
            self.unrecoverable.to_string(),
            self.silent_total().to_string(),
            self.halted.to_string(),
            self.exit_code().to_string(),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes report.json, summary.csv, passes.csv and corruptions.csv
    /// into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
        w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
        w.write_record(self.summary_row()).map_err(csv_err)?;
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("passes.csv")).map_err(csv_err)?;
        w.write_record(PASS_COLUMNS).map_err(csv_err)?;
        for p in &self.passes {
            w.write_record([
                p.index.to_string(),
                p.time.to_string(),
                p.batches.to_string(),
                p.dirty_pages_seen.to_string(),
                p.pages_checksummed.to_string(),
                p.stripes_reparitied.to_string(),
                p.syscalls.to_string(),
                p.walk_steps.to_string(),
                p.tlb_invalidations.to_string(),
                p.simulated_seconds.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("corruptions.csv")).map_err(csv_err)?;
        w.write_record(CORRUPTION_COLUMNS).map_err(csv_err)?;
        for r in &self.corruptions {
            w.write_record([
                r.pass.to_string(),
                r.page.to_string(),
                r.stripe.to_string(),
                r.outcome.map_or("unattempted", |o| o.as_str()).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Appends one sweep row to `path`, writing the header first when the file
/// is new or empty.
pub fn append_sweep_row(path: impl AsRef<Path>, param: &str, value: &str, report: &RunReport) -> Result<()> {
    let path = path.as_ref();
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        let mut header = vec!["param", "value"];
        header.extend(SUMMARY_COLUMNS);
        w.write_record(header).map_err(csv_err)?;
    }
    let mut row = vec![param.to_string(), value.to_string()];
    row.extend(report.summary_row());
    w.write_record(row).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

/// Counts by outcome over distinct pages.
pub fn outcome_counts(reports: &[CorruptionReport]) -> (u64, u64) {
    let mut recovered = 0;
    let mut unrecoverable = std::collections::BTreeSet::new();
    for r in reports {
        match r.outcome {
            Some(RecoveryOutcome::Recovered) => recovered += 1,
            Some(_) | None => {
                unrecoverable.insert(r.page);
            }
        }
    }
    (recovered, unrecoverable.len() as u64)
}

/// Reads back the rows of a CSV file written by this module.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
