//! Optional per-node event log: `timestamp_ns,kernel,event,detail` lines.
//!
//! Timestamps come from a process-wide monotonic clock anchored to wall
//! time at first use, and are strictly increasing within a process so
//! logs from several in-process nodes merge into one total order.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::protocol::KernelId;

pub fn timestamp_ns() -> u64 {
    static ANCHOR: OnceLock<(Instant, u64)> = OnceLock::new();
    static LAST: AtomicU64 = AtomicU64::new(0);
    let (start, wall) = ANCHOR.get_or_init(|| {
        let wall = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
        (Instant::now(), wall)
    });
    let now = wall + start.elapsed().as_nanos() as u64;
    let prev = LAST.fetch_max(now, Ordering::AcqRel);
    if now > prev {
        now
    } else {
        LAST.fetch_add(1, Ordering::AcqRel) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub timestamp_ns: u64,
    pub kernel: KernelId,
    pub event: String,
    pub detail: String,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.timestamp_ns, self.kernel, self.event, self.detail)
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut it = line.splitn(4, ',');
        let mut next = |what| it.next().ok_or_else(|| format!("missing {what} in {line:?}"));
        let timestamp_ns = next("timestamp")?.parse().map_err(|e| format!("timestamp: {e}"))?;
        let kernel = KernelId(next("kernel")?.parse().map_err(|e| format!("kernel: {e}"))?);
        let event = next("event")?.to_string();
        let detail = next("detail")?.to_string();
        Ok(Event { timestamp_ns, kernel, event, detail })
    }
}

#[derive(Default)]
pub struct EventLog {
    records: Option<Mutex<Vec<Event>>>,
    file: Option<Mutex<BufWriter<File>>>,
}

impl EventLog {
    pub fn disabled() -> Self {
        EventLog::default()
    }

    pub fn new(in_memory: bool, path: Option<&Path>) -> std::io::Result<Self> {
        Ok(EventLog {
            records: in_memory.then(|| Mutex::new(Vec::new())),
            file: match path {
                Some(p) => Some(Mutex::new(BufWriter::new(File::create(p)?))),
                None => None,
            },
        })
    }

    pub fn enabled(&self) -> bool {
        self.records.is_some() || self.file.is_some()
    }

    pub fn record(&self, kernel: KernelId, event: &str, detail: impl fmt::Display) {
        if !self.enabled() {
            return;
        }
        let e = Event { timestamp_ns: timestamp_ns(), kernel, event: event.to_string(), detail: detail.to_string() };
        if let Some(f) = &self.file {
            let _ = writeln!(f.lock().unwrap(), "{e}");
        }
        if let Some(r) = &self.records {
            r.lock().unwrap().push(e);
        }
    }

    pub fn records(&self) -> Vec<Event> {
        self.records.as_ref().map_or_else(Vec::new, |r| r.lock().unwrap().clone())
    }

    pub fn flush(&self) {
        if let Some(f) = &self.file {
            let _ = f.lock().unwrap().flush();
        }
    }
}
