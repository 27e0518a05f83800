//! Experiment configuration: a TOML file, `ASYRED_<SECTION>_<KEY>`
//! environment overrides, then command-line flags, in that order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::faults::{BatteryModel, FaultEvent};
use crate::redundancy::StripeConfig;
use crate::reliability::DEFAULT_MTTF_PAGE_HOURS;
use crate::store::StoreConfig;
use crate::updater::UpdaterConfig;
use crate::workload::WorkloadSpec;

pub const ENV_PREFIX: &str = "ASYRED_";

const SECTIONS: [&str; 6] = ["store", "updater", "workload", "run", "battery", "cost"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub page_size: usize,
    pub cache_line: usize,
    pub num_pages: usize,
    pub batch_size: usize,
    pub data_pages_per_stripe: usize,
}

impl Default for StoreSection {
    fn default() -> Self {
        let s = StoreConfig::default();
        Self {
            page_size: s.page_size,
            cache_line: s.cache_line,
            num_pages: s.num_pages,
            batch_size: s.batch_size,
            data_pages_per_stripe: StripeConfig::default().data_pages_per_stripe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdaterSection {
    /// Seconds between updater passes.
    pub period: f64,
    /// Scrub after every this many updater passes.
    pub scrub_every: u64,
    /// Threaded mode only: let the scrubber run alongside passes instead of
    /// taking turns with the updater.
    pub concurrent_scrub: bool,
}

impl Default for UpdaterSection {
    fn default() -> Self {
        Self {
            period: UpdaterConfig::default().period,
            scrub_every: 10,
            concurrent_scrub: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Single-threaded and deterministic: ops, passes, scrubs, samples and
    /// faults are ordered on a simulated timeline.
    Simulated,
    /// Real threads and wall-clock periods.
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: RunMode,
    /// Evenly spaced vulnerable-stripe samples per second.
    pub samples_per_second: f64,
    /// Seconds into the run at which power fails.
    pub power_failure_at: Option<f64>,
    pub mttf_page_hours: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: RunMode::Simulated,
            samples_per_second: 10.0,
            power_failure_at: None,
            mttf_page_hours: DEFAULT_MTTF_PAGE_HOURS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub store: StoreSection,
    pub updater: UpdaterSection,
    pub workload: WorkloadSpec,
    pub run: RunSection,
    pub battery: BatteryModel,
    pub cost: CostModel,
    pub faults: Vec<FaultEvent>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads `path` and applies environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            page_size: self.store.page_size,
            cache_line: self.store.cache_line,
            num_pages: self.store.num_pages,
            batch_size: self.store.batch_size,
        }
    }

    pub fn stripe_config(&self) -> StripeConfig {
        StripeConfig::new(self.store.data_pages_per_stripe)
    }

    pub fn updater_config(&self) -> UpdaterConfig {
        UpdaterConfig {
            period: self.updater.period,
        }
    }

    /// Sets `section.key` from its textual form, which is read as a TOML
    /// value when it parses as one and as a string otherwise.
    pub fn set(&mut self, section: &str, key: &str, raw: &str) -> Result<()> {
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let table = root
            .as_table_mut()
            .expect("config serializes to a table")
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("{section} is not a section")))?;
        table.insert(key.to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{section}.{key} = {raw}: {e}")))?;
        Ok(())
    }

    /// Applies `ASYRED_<SECTION>_<KEY>=value` pairs. Variables naming no
    /// known section are left alone; they may belong to the command line.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut vars: Vec<_> = vars.into_iter().collect();
        vars.sort();
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let rest = rest.to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else { continue };
            if SECTIONS.contains(&section) {
                self.set(section, key, &value)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let store = self.store_config();
        store.validate()?;
        self.stripe_config().validate()?;
        self.updater_config().validate()?;
        if self.updater.scrub_every == 0 {
            return Err(Error::InvalidConfig("scrub_every must be at least 1".into()));
        }
        self.workload.validate(store.page_size, store.cache_line, store.num_pages)?;
        positive("samples_per_second", self.run.samples_per_second)?;
        positive("mttf_page_hours", self.run.mttf_page_hours)?;
        positive("battery.watts", self.battery.watts)?;
        if let Some(t) = self.run.power_failure_at {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidConfig(format!("power_failure_at {t} must be non-negative")));
            }
        }
        for f in &self.faults {
            f.validate(store.num_pages)?;
        }
        if self.run.mode == RunMode::Threaded && (!self.faults.is_empty() || self.run.power_failure_at.is_some()) {
            return Err(Error::InvalidConfig(
                "faults and power failures need mode = \"simulated\"".into(),
            ));
        }
        Ok(())
    }
}
