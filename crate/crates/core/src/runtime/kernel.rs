//! The API a kernel body programs against.

use std::sync::Arc;
use std::time::Duration;

use crate::cluster::NodeId;
use crate::error::{Error, Result};
use crate::memory::{MemoryError, Partition};
use crate::protocol::{
    AmClass, AmHeader, DestLayout, HandlerId, KernelId, Packet, ProtocolError, StridedSpec, VectoredSpec,
    BASE_HEADER_BYTES, MAX_PACKET_BYTES,
};
use crate::runtime::handlers::{HandlerCall, BARRIER_ENTER_HANDLER, BARRIER_RELEASE_HANDLER};
use crate::runtime::state::{KernelShared, PendingGet, RemoteFault};
use crate::runtime::NodeShared;

/// Kernel that coordinates barriers.
pub const BARRIER_ROOT: KernelId = KernelId(0);

/// Largest payload a single get response can carry.
pub const MAX_GET_BYTES: usize = MAX_PACKET_BYTES - BASE_HEADER_BYTES;

/// Execution context handed to a kernel body.
///
/// Only the owning kernel's thread uses it; everything that crosses
/// kernels goes through messages.
pub struct Kernel {
    pub(crate) node: Arc<NodeShared>,
    pub(crate) shared: Arc<KernelShared>,
    reply_baseline: u64,
    barrier_epoch: u64,
    next_token: u32,
    timeout: Option<Duration>,
}

impl Kernel {
    pub(crate) fn new(node: Arc<NodeShared>, shared: Arc<KernelShared>) -> Self {
        let timeout = node.options.default_timeout;
        Kernel { node, shared, reply_baseline: 0, barrier_epoch: 0, next_token: 1, timeout }
    }

    pub fn id(&self) -> KernelId {
        self.shared.id
    }

    pub fn node_id(&self) -> NodeId {
        self.node.node_id
    }

    pub fn kernel_count(&self) -> usize {
        self.node.map.kernel_count()
    }

    pub fn partition(&self) -> &Partition {
        &self.shared.partition
    }

    /// Deadline applied by the blocking calls that take no explicit timeout.
    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }

    pub fn register_handler(&self, id: HandlerId, f: impl Fn(&HandlerCall<'_>) + Send + Sync + 'static) -> Result<()> {
        self.shared.handlers.write().unwrap().register(id, Arc::new(f))
    }

    /// Appends a record to the node's event log, if enabled.
    pub fn log_event(&self, event: &str, detail: impl std::fmt::Display) {
        self.node.events.record(self.id(), event, detail);
    }

    fn header(&self, class: AmClass, dst: KernelId, handler: HandlerId, args: &[u64], asynchronous: bool) -> AmHeader {
        let mut h = AmHeader::new(class, self.id(), dst, handler);
        h.args = args.to_vec();
        h.flags.asynchronous = asynchronous;
        h
    }

    fn take_token(&mut self) -> u32 {
        let t = self.next_token;
        self.next_token = self.next_token.wrapping_add(1);
        t
    }

    /// Validates a header before any payload is gathered.
    fn preflight(h: &AmHeader) -> Result<()> {
        h.validate()?;
        let len = h.encoded_len();
        if len > MAX_PACKET_BYTES {
            return Err(ProtocolError::Oversize { len, max: MAX_PACKET_BYTES }.into());
        }
        Ok(())
    }

    fn send(&mut self, mut h: AmHeader, payload: Vec<u8>) -> Result<u32> {
        let token = self.take_token();
        h.token = token;
        self.node.transport.send_packet(Packet::new(h, payload))?;
        Ok(token)
    }

    pub fn am_short(&mut self, dst: KernelId, handler: HandlerId, args: &[u64], asynchronous: bool) -> Result<()> {
        let h = self.header(AmClass::Short, dst, handler, args, asynchronous);
        self.send(h, Vec::new()).map(drop)
    }

    pub fn am_medium_fifo(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        payload: &[u8],
        asynchronous: bool,
    ) -> Result<()> {
        let mut h = self.header(AmClass::Medium, dst, handler, args, asynchronous);
        h.flags.fifo = true;
        h.payload_len = len_u32(payload.len())?;
        self.send(h, payload.to_vec()).map(drop)
    }

    /// Medium message whose payload is gathered from this kernel's
    /// partition at send time.
    #[allow(clippy::too_many_arguments)]
    pub fn am_medium(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        src_offset: u64,
        len: u64,
        asynchronous: bool,
    ) -> Result<()> {
        let mut h = self.header(AmClass::Medium, dst, handler, args, asynchronous);
        h.payload_len = len_u64(len)?;
        Self::preflight(&h)?;
        let payload = self.shared.partition.read(src_offset, len)?;
        self.send(h, payload).map(drop)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn am_long_fifo(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        payload: &[u8],
        dest_offset: u64,
        asynchronous: bool,
    ) -> Result<()> {
        let mut h = self.header(AmClass::Long, dst, handler, args, asynchronous);
        h.flags.fifo = true;
        h.payload_len = len_u32(payload.len())?;
        h.dest_offset = dest_offset;
        self.send(h, payload.to_vec()).map(drop)
    }

    /// Copies `len` bytes at `src_offset` in this kernel's partition to
    /// `dest_offset` in `dst`'s partition.
    #[allow(clippy::too_many_arguments)]
    pub fn am_long(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        src_offset: u64,
        dest_offset: u64,
        len: u64,
        asynchronous: bool,
    ) -> Result<()> {
        let mut h = self.header(AmClass::Long, dst, handler, args, asynchronous);
        h.payload_len = len_u64(len)?;
        h.dest_offset = dest_offset;
        Self::preflight(&h)?;
        let payload = self.shared.partition.read(src_offset, len)?;
        self.send(h, payload).map(drop)
    }

    #[allow(clippy::too_many_arguments)]
    fn long_with_layout(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        payload: Result<Vec<u8>, u64>,
        layout: DestLayout,
        dest_base: u64,
        asynchronous: bool,
    ) -> Result<()> {
        let mut h = self.header(AmClass::Long, dst, handler, args, asynchronous);
        let total = layout.total_bytes();
        h.flags.fifo = payload.is_ok();
        h.flags.strided = matches!(layout, DestLayout::Strided(_));
        h.flags.vectored = matches!(layout, DestLayout::Vectored(_));
        h.payload_len = len_u64(total)?;
        h.dest_offset = dest_base;
        h.layout = Some(layout);
        let payload = match payload {
            Ok(p) if p.len() as u64 != total => {
                return Err(MemoryError::LengthMismatch { expected: total, actual: p.len() as u64 }.into())
            }
            Ok(p) => {
                Self::preflight(&h)?;
                p
            }
            Err(src_offset) => {
                Self::preflight(&h)?;
                self.shared.partition.read(src_offset, total)?
            }
        };
        self.send(h, payload).map(drop)
    }

    /// Gathers a contiguous source range and scatters it at the receiver
    /// as `spec.block_count` blocks starting at `dest_base`.
    #[allow(clippy::too_many_arguments)]
    pub fn am_long_strided(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        src_offset: u64,
        spec: StridedSpec,
        dest_base: u64,
        asynchronous: bool,
    ) -> Result<()> {
        self.long_with_layout(dst, handler, args, Err(src_offset), DestLayout::Strided(spec), dest_base, asynchronous)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn am_long_strided_fifo(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        payload: &[u8],
        spec: StridedSpec,
        dest_base: u64,
        asynchronous: bool,
    ) -> Result<()> {
        let p = Ok(payload.to_vec());
        self.long_with_layout(dst, handler, args, p, DestLayout::Strided(spec), dest_base, asynchronous)
    }

    /// Vectored entries are absolute offsets in the receiver's partition.
    #[allow(clippy::too_many_arguments)]
    pub fn am_long_vectored(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        src_offset: u64,
        spec: &VectoredSpec,
        asynchronous: bool,
    ) -> Result<()> {
        self.long_with_layout(dst, handler, args, Err(src_offset), DestLayout::Vectored(spec.clone()), 0, asynchronous)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn am_long_vectored_fifo(
        &mut self,
        dst: KernelId,
        handler: HandlerId,
        args: &[u64],
        payload: &[u8],
        spec: &VectoredSpec,
        asynchronous: bool,
    ) -> Result<()> {
        let p = Ok(payload.to_vec());
        self.long_with_layout(dst, handler, args, p, DestLayout::Vectored(spec.clone()), 0, asynchronous)
    }

    fn check_get_len(len: u64) -> Result<()> {
        if len > MAX_GET_BYTES as u64 {
            let len = BASE_HEADER_BYTES.saturating_add(len as usize);
            return Err(ProtocolError::Oversize { len, max: MAX_PACKET_BYTES }.into());
        }
        Ok(())
    }

    fn send_get(&mut self, mut h: AmHeader, pending: PendingGet) -> Result<u32> {
        let token = self.take_token();
        h.token = token;
        self.shared.lock().pending_gets.insert(token, pending);
        if let Err(e) = self.node.transport.send_packet(Packet::new(h, Vec::new())) {
            self.shared.lock().pending_gets.remove(&token);
            return Err(e);
        }
        Ok(token)
    }

    /// Fetches `len` bytes from `remote`'s partition into this kernel's
    /// inbound queue. `handler` (if not 0) runs locally once the data has
    /// arrived. Completion counts as one reply.
    pub fn get_medium(
        &mut self,
        remote: KernelId,
        remote_offset: u64,
        len: u64,
        handler: HandlerId,
        args: &[u64],
    ) -> Result<u32> {
        Self::check_get_len(len)?;
        let mut h = self.header(AmClass::Medium, remote, 0, &[], false);
        h.flags.get = true;
        h.payload_len = len as u32;
        h.dest_offset = remote_offset;
        let pending = PendingGet::Medium { remote, handler, args: args.to_vec() };
        self.send_get(h, pending)
    }

    /// Fetches `len` bytes from `remote`'s partition into this kernel's
    /// partition at `local_offset`. Completion counts as one reply.
    pub fn get_long(&mut self, remote: KernelId, remote_offset: u64, len: u64, local_offset: u64) -> Result<u32> {
        Self::check_get_len(len)?;
        let size = self.shared.partition.size();
        if local_offset.checked_add(len).is_none_or(|end| end > size) {
            return Err(MemoryError::OutOfBounds { offset: local_offset, len, size }.into());
        }
        let mut h = self.header(AmClass::Long, remote, 0, &[local_offset], false);
        h.flags.get = true;
        h.payload_len = len as u32;
        h.dest_offset = remote_offset;
        self.send_get(h, PendingGet::Long { remote })
    }

    pub fn reply_count(&self) -> u64 {
        self.shared.lock().reply_count
    }

    /// Blocks until `n` more replies have arrived since the last wait.
    pub fn wait_replies(&mut self, n: u64) -> Result<()> {
        self.wait_replies_timeout(n, self.timeout)
    }

    pub fn wait_replies_timeout(&mut self, n: u64, timeout: Option<Duration>) -> Result<()> {
        let target = self.reply_baseline + n;
        if n > 0 {
            self.shared.wait_for(timeout, |st| (st.reply_count >= target).then_some(()))?;
        }
        self.reply_baseline = target;
        Ok(())
    }

    /// Moves the wait baseline to the current reply count, forgetting any
    /// replies still owed from an abandoned wait.
    pub fn resync_replies(&mut self) {
        self.reply_baseline = self.reply_count();
    }

    /// Error replies received so far, oldest first.
    pub fn take_faults(&self) -> Vec<RemoteFault> {
        std::mem::take(&mut self.shared.lock().faults)
    }

    pub fn barrier(&mut self) -> Result<()> {
        self.barrier_timeout(self.timeout)
    }

    /// Centralised barrier: every kernel reports to kernel 0, which
    /// releases everyone once all have entered the current epoch.
    pub fn barrier_timeout(&mut self, timeout: Option<Duration>) -> Result<()> {
        let epoch = self.barrier_epoch;
        let k = self.kernel_count();
        self.log_event("ENTER", epoch);
        if k > 1 {
            if self.id() == BARRIER_ROOT {
                let need = k - 1;
                self.shared.wait_for(timeout, |st| {
                    let arrived = st.barrier_arrivals.get(&epoch).copied().unwrap_or(0);
                    (arrived >= need).then(|| st.barrier_arrivals.remove(&epoch))
                })?;
                for other in (0..k as u16).map(KernelId).filter(|&o| o != BARRIER_ROOT) {
                    self.am_short(other, BARRIER_RELEASE_HANDLER, &[epoch], true)?;
                }
            } else {
                self.am_short(BARRIER_ROOT, BARRIER_ENTER_HANDLER, &[epoch], true)?;
                self.shared.wait_for(timeout, |st| (st.barrier_released > epoch).then_some(()))?;
            }
        }
        self.log_event("EXIT", epoch);
        self.barrier_epoch += 1;
        Ok(())
    }

    pub fn barrier_epoch(&self) -> u64 {
        self.barrier_epoch
    }

    /// Blocks until a Medium payload is available and dequeues it.
    pub fn recv_payload(&mut self) -> Result<(KernelId, Vec<u8>)> {
        self.recv_payload_timeout(self.timeout)
    }

    pub fn recv_payload_timeout(&mut self, timeout: Option<Duration>) -> Result<(KernelId, Vec<u8>)> {
        self.shared.wait_for(timeout, |st| st.inbound.pop_front())
    }

    pub fn try_recv_payload(&mut self) -> Option<(KernelId, Vec<u8>)> {
        self.shared.lock().inbound.pop_front()
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Protocol(ProtocolError::Oversize { len: n, max: MAX_PACKET_BYTES }))
}

fn len_u64(n: u64) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Protocol(ProtocolError::Oversize { len: n as usize, max: MAX_PACKET_BYTES }))
}
