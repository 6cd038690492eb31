use std::collections::VecDeque;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use eight_core::Value;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::error::RuntimeError;
use crate::json::serde_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Scanned,
    Loaded,
    Updated,
    Unloaded,
    Instantiated,
    Activated,
    Rebound,
    DrainStarted,
    Released,
    ConfigChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub time: u64,
    pub subject: String,
    pub action: Action,
    #[serde(with = "serde_value")]
    pub detail: Value,
}

pub const DEFAULT_CAPACITY: usize = 65_536;

struct Log {
    events: VecDeque<LifecycleEvent>,
    next_seq: u64,
}

/// Append-only, bounded, totally ordered event log.
///
/// Sequence numbers start at 1 and have no gaps. Once `capacity` events
/// are retained the oldest are dropped; readers asking for them get
/// [`RuntimeError::CursorTooOld`].
pub struct EventLog {
    log: Mutex<Log>,
    capacity: usize,
    cond: Condvar,
    notify: tokio::sync::Notify,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl EventLog {
    pub fn new(capacity: usize) -> Self {
        EventLog {
            log: Mutex::new(Log { events: VecDeque::new(), next_seq: 1 }),
            capacity: capacity.max(1),
            cond: Condvar::new(),
            notify: tokio::sync::Notify::new(),
        }
    }

    pub fn push(&self, subject: impl Into<String>, action: Action, detail: Value) -> LifecycleEvent {
        let mut log = self.log.lock();
        let event = LifecycleEvent { seq: log.next_seq, time: now_millis(), subject: subject.into(), action, detail };
        log.next_seq += 1;
        if log.events.len() == self.capacity {
            log.events.pop_front();
        }
        log.events.push_back(event.clone());
        drop(log);
        self.cond.notify_all();
        self.notify.notify_waiters();
        event
    }

    /// Sequence number of the newest event, 0 when none.
    pub fn last_seq(&self) -> u64 {
        self.log.lock().next_seq - 1
    }

    /// Oldest retained sequence number.
    pub fn oldest_seq(&self) -> u64 {
        let log = self.log.lock();
        log.events.front().map_or(log.next_seq, |e| e.seq)
    }

    /// Events with `seq > cursor`, in order.
    pub fn since(&self, cursor: u64) -> Result<Vec<LifecycleEvent>, RuntimeError> {
        let log = self.log.lock();
        Self::after(&log, cursor)
    }

    fn after(log: &Log, cursor: u64) -> Result<Vec<LifecycleEvent>, RuntimeError> {
        let oldest = log.events.front().map_or(log.next_seq, |e| e.seq);
        if cursor + 1 < oldest {
            return Err(RuntimeError::CursorTooOld { cursor, oldest });
        }
        let skip = (cursor + 1 - oldest) as usize;
        Ok(log.events.iter().skip(skip).cloned().collect())
    }

    /// Blocks until there is an event after `cursor` or `timeout` passes.
    pub fn wait_since(&self, cursor: u64, timeout: Duration) -> Result<Vec<LifecycleEvent>, RuntimeError> {
        let deadline = Instant::now() + timeout;
        let mut log = self.log.lock();
        loop {
            let out = Self::after(&log, cursor)?;
            if !out.is_empty() || self.cond.wait_until(&mut log, deadline).timed_out() {
                return Self::after(&log, cursor);
            }
        }
    }

    /// Blocks until an event matching `pred` appears after `cursor`.
    pub fn wait_for(
        &self,
        mut cursor: u64,
        timeout: Duration,
        pred: impl Fn(&LifecycleEvent) -> bool,
    ) -> Option<LifecycleEvent> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.checked_duration_since(Instant::now())?;
            let batch = match self.wait_since(cursor, left) {
                Ok(b) => b,
                Err(_) => return None,
            };
            if let Some(e) = batch.iter().find(|e| pred(e)) {
                return Some(e.clone());
            }
            cursor = batch.last().map_or(cursor, |e| e.seq);
        }
    }

    /// Future completing on the next push. Enable it before reading the
    /// log, or a push in between is missed.
    pub fn notified(&self) -> tokio::sync::futures::Notified<'_> {
        self.notify.notified()
    }
}

impl Default for EventLog {
    fn default() -> Self {
        EventLog::new(DEFAULT_CAPACITY)
    }
}
