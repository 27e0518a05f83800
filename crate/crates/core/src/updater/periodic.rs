use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::{PassCursor, PassStats, ShadowState};
use crate::error::{Error, Result};
use crate::redundancy::RedundancyRegion;
use crate::store::PagedStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdaterConfig {
    /// Seconds between pass starts.
    pub period: f64,
}

impl Default for UpdaterConfig {
    fn default() -> Self {
        Self { period: 10.0 }
    }
}

impl UpdaterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::InvalidConfig(format!("period must be positive, got {}", self.period)));
        }
        Ok(())
    }

    pub fn period(&self) -> Duration {
        Duration::from_secs_f64(self.period)
    }
}

/// Raised once to ask background loops to finish.
#[derive(Debug, Default)]
pub struct StopSignal {
    raised: Mutex<bool>,
    cv: Condvar,
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self) {
        *self.raised.lock() = true;
        self.cv.notify_all();
    }

    pub fn is_raised(&self) -> bool {
        *self.raised.lock()
    }

    /// Sleeps up to `timeout`; returns true if the signal was raised.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        let mut raised = self.raised.lock();
        if !*raised {
            self.cv.wait_for(&mut raised, timeout);
        }
        *raised
    }
}

/// Time source for periodic loops.
pub trait Clock: Send + Sync {
    /// Time since the clock's origin.
    fn now(&self) -> Duration;

    /// Blocks until `deadline` or until `stop` is raised. Returns false if
    /// the loop should end instead of running at `deadline`.
    fn wait_until(&self, deadline: Duration, stop: &StopSignal) -> bool;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn wait_until(&self, deadline: Duration, stop: &StopSignal) -> bool {
        loop {
            if stop.is_raised() {
                return false;
            }
            let now = self.now();
            if now >= deadline {
                return true;
            }
            if stop.wait_timeout(deadline - now) {
                return false;
            }
        }
    }
}

/// A clock that jumps straight to each deadline. With a horizon set, waits
/// past the horizon end the loop.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
    horizon: Option<Duration>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_horizon(horizon: Duration) -> Self {
        Self {
            now: Mutex::new(Duration::ZERO),
            horizon: Some(horizon),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock()
    }

    fn wait_until(&self, deadline: Duration, stop: &StopSignal) -> bool {
        if stop.is_raised() || self.horizon.is_some_and(|h| deadline > h) {
            return false;
        }
        let mut now = self.now.lock();
        if *now < deadline {
            *now = deadline;
        }
        true
    }
}

/// Runs an updater pass every period until stopped.
pub struct PeriodicUpdater<'a> {
    config: UpdaterConfig,
    exclusive: Option<&'a Mutex<()>>,
}

impl<'a> PeriodicUpdater<'a> {
    pub fn new(config: UpdaterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, exclusive: None })
    }

    /// Holds `lock` for the duration of each pass, so a scrubber taking the
    /// same lock never overlaps a pass.
    pub fn exclusive_with(mut self, lock: &'a Mutex<()>) -> Self {
        self.exclusive = Some(lock);
        self
    }

    /// Deadlines are `start + k * period`, independent of how long each pass
    /// takes. A pass that overruns its slot is followed immediately by the
    /// next one. A stop request ends the in-flight pass after its current
    /// batch. Returns the number of passes run.
    pub fn run(
        &self,
        store: &PagedStore,
        region: &RedundancyRegion,
        shadow: &ShadowState,
        clock: &dyn Clock,
        stop: &StopSignal,
        mut on_pass: impl FnMut(Duration, PassStats),
    ) -> Result<u64> {
        let period = self.config.period();
        let mut deadline = clock.now();
        let mut passes = 0;
        loop {
            deadline += period;
            if !clock.wait_until(deadline, stop) {
                return Ok(passes);
            }
            let stats = {
                let _guard = self.exclusive.map(|l| l.lock());
                PassCursor::new(store, region, shadow).with_stop(stop).run()?
            };
            passes += 1;
            on_pass(clock.now(), stats);
            if stats.aborted {
                return Ok(passes);
            }
        }
    }
}
