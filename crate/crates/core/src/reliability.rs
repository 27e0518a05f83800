//! Mean time to data loss with and without asynchronous redundancy.
//!
//! Without redundancy any single page failure loses data. With redundancy
//! a page failure only loses data when it hits a stripe that currently has
//! pending (uncovered) updates; every page of such a stripe is exposed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::redundancy::StripeConfig;
use crate::store::PagedStore;
use crate::updater::{is_covered_pending, ShadowState};

pub const DEFAULT_MTTF_PAGE_HOURS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MttdlInputs {
    /// Mean time to failure of a single page, in hours.
    pub mttf_page: f64,
    /// P: every page that can fail, data and parity.
    pub total_pages: u64,
    /// N: pages per stripe, data and parity.
    pub pages_per_stripe: u64,
    /// V: (average) number of vulnerable stripes.
    pub vulnerable_stripes: f64,
}

impl MttdlInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !(self.mttf_page.is_finite() && self.mttf_page > 0.0) {
            return bad(format!("mttf_page must be positive, got {}", self.mttf_page));
        }
        if self.total_pages == 0 {
            return bad("total_pages must be positive".into());
        }
        if self.pages_per_stripe == 0 {
            return bad("pages_per_stripe must be positive".into());
        }
        let max_v = self.total_pages.div_ceil(self.pages_per_stripe) as f64;
        if !(self.vulnerable_stripes >= 0.0 && self.vulnerable_stripes <= max_v * (1.0 + 1e-12)) {
            return bad(format!(
                "vulnerable_stripes {} outside [0, {max_v}]",
                self.vulnerable_stripes
            ));
        }
        Ok(())
    }
}

/// MTTF_page / P.
pub fn mttdl_no_redundancy(inputs: &MttdlInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.mttf_page / inputs.total_pages as f64)
}

/// MTTF_page / (V * N); `None` (unbounded) when no stripe is vulnerable.
pub fn mttdl_with_redundancy(inputs: &MttdlInputs) -> Result<Option<f64>> {
    inputs.validate()?;
    if inputs.vulnerable_stripes == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        inputs.mttf_page / (inputs.vulnerable_stripes * inputs.pages_per_stripe as f64),
    ))
}

/// Ratio of the two MTTDLs, P / (V * N); `None` when unbounded.
pub fn improvement_factor(inputs: &MttdlInputs) -> Result<Option<f64>> {
    let base = mttdl_no_redundancy(inputs)?;
    Ok(mttdl_with_redundancy(inputs)?.map(|m| m / base))
}

/// Number of stripes holding at least one page whose redundancy is pending
/// (dirty, or in the persisted shadow copy of an unfinished batch).
pub fn sample_vulnerable_stripes(store: &PagedStore, shadow: &ShadowState, stripes: StripeConfig) -> usize {
    let n = store.num_pages();
    (0..stripes.num_stripes(n))
        .filter(|&s| stripes.data_pages(s, n).any(|p| is_covered_pending(store, shadow, p)))
        .count()
}

/// Running averages of vulnerable-stripe samples. Samples taken right
/// before a pass (the worst case) are kept apart from the evenly spaced
/// ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilitySampler {
    pub samples: u64,
    pub sum: u64,
    pub max: u64,
    pub prepass_samples: u64,
    pub prepass_sum: u64,
}

impl VulnerabilitySampler {
    pub fn record(&mut self, v: usize) {
        self.samples += 1;
        self.sum += v as u64;
        self.max = self.max.max(v as u64);
    }

    pub fn record_prepass(&mut self, v: usize) {
        self.prepass_samples += 1;
        self.prepass_sum += v as u64;
    }

    pub fn average(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.sum as f64 / self.samples as f64
        }
    }

    pub fn prepass_average(&self) -> f64 {
        if self.prepass_samples == 0 {
            0.0
        } else {
            self.prepass_sum as f64 / self.prepass_samples as f64
        }
    }
}

/// The MTTDL block of a run report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MttdlReport {
    pub mttf_page_hours: f64,
    pub total_pages: u64,
    pub pages_per_stripe: u64,
    pub v_avg: f64,
    pub v_prepass_avg: f64,
    pub v_max: u64,
    pub samples: u64,
    pub mttdl_no_redundancy_hours: f64,
    /// `None` when no stripe was ever vulnerable.
    pub mttdl_with_redundancy_hours: Option<f64>,
    pub improvement_factor: Option<f64>,
}

impl MttdlReport {
    pub fn new(
        mttf_page_hours: f64,
        num_pages: usize,
        stripes: StripeConfig,
        sampler: &VulnerabilitySampler,
    ) -> Result<Self> {
        let num_stripes = stripes.num_stripes(num_pages) as u64;
        let inputs = MttdlInputs {
            mttf_page: mttf_page_hours,
            total_pages: num_pages as u64 + num_stripes,
            pages_per_stripe: stripes.pages_per_stripe() as u64,
            vulnerable_stripes: sampler.average(),
        };
        Ok(Self {
            mttf_page_hours,
            total_pages: inputs.total_pages,
            pages_per_stripe: inputs.pages_per_stripe,
            v_avg: inputs.vulnerable_stripes,
            v_prepass_avg: sampler.prepass_average(),
            v_max: sampler.max,
            samples: sampler.samples,
            mttdl_no_redundancy_hours: mttdl_no_redundancy(&inputs)?,
            mttdl_with_redundancy_hours: mttdl_with_redundancy(&inputs)?,
            improvement_factor: improvement_factor(&inputs)?,
        })
    }
}
