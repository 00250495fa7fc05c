//! Per-kernel message engine: the ingress half of the runtime.
//!
//! Each local kernel gets one engine thread that drains its inbox in
//! arrival order. For every packet the engine
//!
//! 1. services get requests by reading the partition and sending the
//!    data back as an asynchronous put to handler 0;
//! 2. writes Long payloads into memory, or queues Medium payloads for the
//!    kernel, before anything else observes the message;
//! 3. runs the named handler;
//! 4. replies, unless the message was asynchronous.
//!
//! Anything addressed to handler 0 is a reply (or a get response) and only
//! bumps the reply counter; it never elicits a reply of its own.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use crossbeam_channel::{select, Receiver};
use log::warn;

use crate::error::FaultCode;
use crate::memory::Layout;
use crate::protocol::{AmClass, AmHeader, Packet, REPLY_HANDLER};
use crate::runtime::events::EventLog;
use crate::runtime::handlers::{HandlerCall, BARRIER_ENTER_HANDLER, BARRIER_RELEASE_HANDLER, NOOP_HANDLER};
use crate::runtime::state::{Diagnostic, KernelShared, PendingGet, RemoteFault};
use crate::transport::Transport;

pub(crate) struct Engine {
    pub kernel: Arc<KernelShared>,
    pub transport: Arc<Transport>,
    pub events: Arc<EventLog>,
    pub diagnostics: Arc<Mutex<Vec<Diagnostic>>>,
}

impl Engine {
    pub fn run(self, inbox: Receiver<Packet>, stop: Receiver<()>) {
        loop {
            select! {
                recv(inbox) -> p => match p {
                    Ok(p) => self.handle(p),
                    Err(_) => return,
                },
                recv(stop) -> _ => return,
            }
        }
    }

    fn diagnose(&self, kind: &'static str, detail: String) {
        let kernel = self.kernel.id;
        warn!("kernel {kernel}: {kind}: {detail}");
        self.events.record(kernel, kind, &detail);
        self.diagnostics.lock().unwrap().push(Diagnostic { kernel, kind, detail });
    }

    fn send(&self, packet: Packet) {
        if let Err(e) = self.transport.send_packet(packet) {
            self.diagnose("SEND_FAILED", e.to_string());
        }
    }

    fn reply(&self, inbound: &AmHeader, fault: Option<FaultCode>) {
        let status = fault.map_or(0, |c| c as u64);
        self.send(Packet::new(AmHeader::reply_to(inbound, status), Vec::new()));
    }

    pub fn handle(&self, packet: Packet) {
        let Packet { header, payload } = packet;
        if header.flags.get {
            self.serve_get(&header);
        } else if header.handler_id == REPLY_HANDLER {
            self.count_reply(&header, payload);
        } else {
            self.deliver(&header, payload);
        }
    }

    fn serve_get(&self, req: &AmHeader) {
        let data = match self.kernel.partition.read(req.dest_offset, req.payload_len as u64) {
            Ok(d) => d,
            Err(e) => {
                self.diagnose(FaultCode::from(&e).name(), format!("get from {}: {e}", req.src));
                return self.reply(req, Some(FaultCode::from(&e)));
            }
        };
        let mut h = AmHeader::new(req.class, req.dst, req.src, REPLY_HANDLER);
        h.flags.fifo = true;
        h.flags.asynchronous = true;
        h.token = req.token;
        h.payload_len = data.len() as u32;
        if req.class == AmClass::Long {
            h.dest_offset = req.args.first().copied().unwrap_or(0);
        }
        if let Err(e) = self.transport.send_packet(Packet::new(h, data)) {
            self.diagnose("SEND_FAILED", format!("get response to {}: {e}", req.src));
            self.reply(req, Some(FaultCode::SendFailed));
        }
    }

    /// Handler 0: get responses, replies and anything else aimed at the
    /// reply counter.
    fn count_reply(&self, h: &AmHeader, payload: Vec<u8>) {
        if h.class == AmClass::Long {
            if let Err(e) = self.write_long(h, &payload) {
                self.diagnose(FaultCode::from(&e).name(), format!("response from {}: {e}", h.src));
            }
        }
        let pending = {
            let mut st = self.kernel.lock();
            match st.pending_gets.get(&h.token) {
                Some(p) if p.remote() == h.src => st.pending_gets.remove(&h.token),
                _ => None,
            }
        };
        if h.class == AmClass::Medium {
            self.kernel.update(|st| st.inbound.push_back((h.src, payload.clone())));
            if let Some(PendingGet::Medium { handler, args, .. }) = &pending {
                if *handler != REPLY_HANDLER {
                    self.invoke(*handler, h.src, args, &payload, h.token);
                }
            }
        }
        self.kernel.update(|st| {
            if h.class == AmClass::Short {
                if let Some(&raw) = h.args.first().filter(|a| **a != 0) {
                    st.faults.push(RemoteFault { from: h.src, token: h.token, code: FaultCode::from_u64(raw), raw });
                }
            }
            st.reply_count += 1;
        });
    }

    fn write_long(&self, h: &AmHeader, payload: &[u8]) -> Result<(), crate::memory::MemoryError> {
        let layout = h.layout.as_ref().map_or(Layout::Contiguous(payload.len() as u64), Layout::from);
        self.kernel.partition.scatter(h.dest_offset, layout, payload)
    }

    fn deliver(&self, h: &AmHeader, payload: Vec<u8>) {
        let mut fault = None;
        match h.class {
            AmClass::Long => {
                // hold-buffer rule: memory first, then handler, then reply
                if let Err(e) = self.write_long(h, &payload) {
                    self.diagnose(FaultCode::from(&e).name(), format!("long from {}: {e}", h.src));
                    fault = Some(FaultCode::from(&e));
                }
            }
            AmClass::Medium => {
                self.kernel.update(|st| st.inbound.push_back((h.src, payload.clone())));
            }
            AmClass::Short => {}
        }
        if fault.is_none() && !self.invoke(h.handler_id, h.src, &h.args, &payload, h.token) {
            fault = Some(FaultCode::UnknownHandler);
        }
        if !h.flags.asynchronous {
            self.reply(h, fault);
        }
    }

    /// Runs a handler; false if no handler with that id exists.
    fn invoke(&self, id: u16, src: crate::protocol::KernelId, args: &[u64], payload: &[u8], token: u32) -> bool {
        match id {
            NOOP_HANDLER => return true,
            BARRIER_ENTER_HANDLER => {
                let epoch = args.first().copied().unwrap_or(0);
                self.kernel.update(|st| *st.barrier_arrivals.entry(epoch).or_default() += 1);
                return true;
            }
            BARRIER_RELEASE_HANDLER => {
                let epoch = args.first().copied().unwrap_or(0);
                self.kernel.update(|st| st.barrier_released = st.barrier_released.max(epoch + 1));
                return true;
            }
            _ => {}
        }
        let Some(f) = self.kernel.handlers.read().unwrap().get(id) else {
            self.diagnose("UNKNOWN_HANDLER", format!("handler {id} from kernel {src}"));
            return false;
        };
        let call = HandlerCall { kernel: self.kernel.id, src, args, payload, token, partition: &self.kernel.partition };
        if catch_unwind(AssertUnwindSafe(|| f(&call))).is_err() {
            self.diagnose("HANDLER_PANIC", format!("handler {id} from kernel {src}"));
        }
        true
    }
}
