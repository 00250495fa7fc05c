use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use crate::error::{Error, FaultCode, Result};
use crate::memory::Partition;
use crate::protocol::{HandlerId, KernelId};
use crate::runtime::handlers::HandlerTable;

/// A failure reported back by a remote engine through an error reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteFault {
    pub from: KernelId,
    pub token: u32,
    pub code: Option<FaultCode>,
    pub raw: u64,
}

/// A problem the local engine hit while processing an inbound message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kernel: KernelId,
    pub kind: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub(crate) enum PendingGet {
    Medium { remote: KernelId, handler: HandlerId, args: Vec<u64> },
    Long { remote: KernelId },
}

impl PendingGet {
    pub(crate) fn remote(&self) -> KernelId {
        match self {
            PendingGet::Medium { remote, .. } | PendingGet::Long { remote } => *remote,
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct KernelState {
    pub reply_count: u64,
    pub inbound: VecDeque<(KernelId, Vec<u8>)>,
    pub pending_gets: HashMap<u32, PendingGet>,
    pub faults: Vec<RemoteFault>,
    /// ENTER arrivals per epoch; only populated on the barrier root.
    pub barrier_arrivals: HashMap<u64, usize>,
    /// Number of barrier epochs released so far (non-root kernels).
    pub barrier_released: u64,
    pub shutdown: bool,
}

/// State shared by a kernel and its message engine.
pub(crate) struct KernelShared {
    pub id: KernelId,
    pub partition: Arc<Partition>,
    pub handlers: RwLock<HandlerTable>,
    state: Mutex<KernelState>,
    cond: Condvar,
}

impl KernelShared {
    pub fn new(id: KernelId, partition_bytes: u64) -> Self {
        KernelShared {
            id,
            partition: Arc::new(Partition::new(id, partition_bytes)),
            handlers: RwLock::new(HandlerTable::default()),
            state: Mutex::new(KernelState::default()),
            cond: Condvar::new(),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, KernelState> {
        self.state.lock().unwrap()
    }

    /// Applies `f` under the state lock and wakes every waiter.
    pub fn update<R>(&self, f: impl FnOnce(&mut KernelState) -> R) -> R {
        let r = f(&mut self.lock());
        self.cond.notify_all();
        r
    }

    /// Blocks until `f` yields a value, the deadline passes or the node
    /// shuts down. `f` sees the state first, so a ready value wins over
    /// shutdown.
    pub fn wait_for<T>(
        &self,
        timeout: Option<Duration>,
        mut f: impl FnMut(&mut KernelState) -> Option<T>,
    ) -> Result<T> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.lock();
        loop {
            if let Some(v) = f(&mut st) {
                return Ok(v);
            }
            if st.shutdown {
                return Err(Error::Shutdown);
            }
            st = match deadline {
                None => self.cond.wait(st).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(Error::Timeout(timeout.unwrap()));
                    }
                    self.cond.wait_timeout(st, d - now).unwrap().0
                }
            };
        }
    }
}
