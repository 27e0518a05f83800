//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment;
use crate::report::{append_sweep_row, RunReport, EXIT_CLEAN, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "asyred", version, about = "Asynchronous checksum and parity maintenance simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configured scenario and write its reports.
    Run(CommonArgs),
    /// Run the scenario once per value of a parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML experiment configuration.
    #[arg(long, env = "ASYRED_CONFIG")]
    pub config: PathBuf,
    /// Directory for report files.
    #[arg(long, env = "ASYRED_OUT")]
    pub out: PathBuf,
    /// Overrides workload.seed.
    #[arg(long, env = "ASYRED_SEED")]
    pub seed: Option<u64>,
    /// Overrides the run length in seconds (and drops workload.total_ops).
    #[arg(long, env = "ASYRED_DURATION")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    Period,
    BatchSize,
    Threads,
    /// Pages per stripe, parity included.
    StripeSize,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Period => "period",
            SweepParam::BatchSize => "batch_size",
            SweepParam::Threads => "threads",
            SweepParam::StripeSize => "stripe_size",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, raw: &str) -> Result<()> {
        let bad = || Error::InvalidConfig(format!("bad {} value {raw:?}", self.name()));
        let int = || raw.trim().parse::<usize>().map_err(|_| bad());
        match self {
            SweepParam::Period => cfg.updater.period = raw.trim().parse().map_err(|_| bad())?,
            SweepParam::BatchSize => cfg.store.batch_size = int()?,
            SweepParam::Threads => cfg.workload.threads = int()?,
            SweepParam::StripeSize => {
                cfg.store.data_pages_per_stripe = int()?.checked_sub(1).filter(|&d| d > 0).ok_or_else(bad)?
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.workload.seed = seed;
    }
    if let Some(d) = args.duration {
        cfg.workload.duration = Some(d);
        cfg.workload.total_ops = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(label: &str, r: &RunReport) {
    let f = |v: Option<f64>| v.map_or_else(|| "unbounded".to_string(), |x| format!("{x:.3}"));
    println!("{label}");
    println!("  passes               {}", r.passes.len());
    println!("  ops / writes         {} / {}", r.workload.ops, r.workload.writes);
    println!("  pages checksummed    {}", r.pages_checksummed);
    println!("  stripes reparitied   {}", r.stripes_reparitied);
    println!("  dirty-bit syscalls   {}", r.dirty_bit_ops.syscalls());
    println!("  walk steps           {}", r.dirty_bit_ops.walk_steps);
    println!("  V avg / pre-pass     {:.3} / {:.3}", r.mttdl.v_avg, r.mttdl.v_prepass_avg);
    println!("  MTTDL improvement    {}", f(r.mttdl.improvement_factor));
    println!(
        "  battery              {:.4} s, {:.6} KJ, ${:.4} ultra-cap, ${:.6} Li-ion",
        r.battery.pass_seconds, r.battery.energy_kj, r.battery.ultracap_usd, r.battery.liion_usd
    );
    println!(
        "  corruption           {} reported, {} recovered, {} unrecoverable, {} silent",
        r.corruptions.len(),
        r.recovered,
        r.unrecoverable,
        r.silent_total()
    );
    println!("  converged            {}", r.converged);
}

fn run_one(cfg: &ExperimentConfig, out: &Path, label: &str) -> Result<RunReport> {
    let report = experiment::run(cfg)?;
    report.write_dir(out)?;
    print_summary(label, &report);
    Ok(report)
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            Ok(run_one(&cfg, &args.out, "run")?.exit_code())
        }
        Command::Sweep(args) => {
            let base = load(&args.common)?;
            let mut configs = Vec::new();
            for v in &args.values {
                let mut cfg = base.clone();
                args.param.apply(&mut cfg, v)?;
                cfg.validate()?;
                configs.push((v.trim().to_string(), cfg));
            }
            fs::create_dir_all(&args.common.out)?;
            let sweep_csv = args.common.out.join("sweep.csv");
            if sweep_csv.exists() {
                fs::remove_file(&sweep_csv)?;
            }
            let mut code = EXIT_CLEAN;
            for (v, cfg) in configs {
                let name = format!("{}={v}", args.param.name());
                let report = run_one(&cfg, &args.common.out.join(&name), &name)?;
                append_sweep_row(&sweep_csv, args.param.name(), &v, &report)?;
                code = code.max(report.exit_code());
            }
            Ok(code)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 clean, 1 bad configuration or other failure,
/// 2 silent or unrecoverable corruption.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_CLEAN };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("asyred: {e}");
            EXIT_CONFIG
        }
    }
}
