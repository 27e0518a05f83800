//! Asynchronous system redundancy for an emulated direct-access store.
//!
//! Writes mark pages dirty; a background [`updater`] periodically batches
//! the dirty bits and refreshes per-page CRC-32C checksums, XOR parity per
//! stripe and a meta-checksum. A [`scrubber`] verifies clean pages and
//! recovers single corruptions from parity. [`faults`] injects firmware-style
//! corruption and power failures, [`reliability`] turns vulnerable-stripe
//! counts into MTTDL estimates, and [`workload`] drives synthetic load.

pub mod cli;
pub mod config;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod faults;
pub mod redundancy;
pub mod reliability;
pub mod report;
pub mod scrubber;
pub mod store;
pub mod updater;
pub mod workload;

pub use error::{Error, Result};
