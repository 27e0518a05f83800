use std::sync::Arc;

use parking_lot::Mutex;

/// What the updater made durable, in order. `OrderingPoint` marks a fence:
/// everything before it is durable before anything after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PersistEvent {
    ShadowPersisted { batch_start: usize, pages: usize },
    OrderingPoint,
    DirtyBitsCleared { batch_start: usize, cleared: u64 },
    ChecksumWritten { page: usize },
    ParityWritten { stripe: usize },
    ShadowCleared { batch_start: usize },
    MetaChecksumWritten,
}

/// Shared, append-only persistence event log.
#[derive(Debug, Clone, Default)]
pub struct PersistLog(Arc<Mutex<Vec<PersistEvent>>>);

impl PersistLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: PersistEvent) {
        self.0.lock().push(event);
    }

    pub fn events(&self) -> Vec<PersistEvent> {
        self.0.lock().clone()
    }

    pub fn clear(&self) {
        self.0.lock().clear();
    }
}
