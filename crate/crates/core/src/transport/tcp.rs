//! TCP driver. Each frame is a 4-byte little-endian length followed by one
//! encoded packet. A node keeps one outgoing connection per peer, opened
//! lazily and serialised by a lock, so packets between a fixed pair of
//! nodes arrive in send order.

use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::Shared;
use crate::cluster::NodeId;
use crate::error::{Error, Result};
use crate::protocol::{BASE_HEADER_BYTES, MAX_PACKET_BYTES};

pub(crate) const FRAME_PREFIX_BYTES: usize = 4;

pub(crate) struct TcpDriver {
    shared: Arc<Shared>,
    addrs: Vec<SocketAddr>,
    peers: Vec<Mutex<Option<TcpStream>>>,
    accepted: Arc<Mutex<Vec<TcpStream>>>,
    readers: Arc<Mutex<Vec<JoinHandle<()>>>>,
    connect_timeout: Duration,
}

impl TcpDriver {
    pub(crate) fn start(
        listener: TcpListener,
        addrs: Vec<SocketAddr>,
        shared: Arc<Shared>,
        connect_timeout: Duration,
    ) -> Result<(Self, JoinHandle<()>)> {
        listener.set_nonblocking(true)?;
        let accepted = Arc::new(Mutex::new(Vec::new()));
        let readers = Arc::new(Mutex::new(Vec::new()));
        let accept = {
            let shared = shared.clone();
            let accepted = accepted.clone();
            let readers = readers.clone();
            thread::Builder::new()
                .name(format!("shoal-tcp-accept-{}", shared.node_id))
                .spawn(move || accept_loop(listener, shared, accepted, readers))?
        };
        let peers = addrs.iter().map(|_| Mutex::new(None)).collect();
        Ok((TcpDriver { shared, addrs, peers, accepted, readers, connect_timeout }, accept))
    }

    fn connect(&self, idx: usize, node: NodeId, timeout: Duration) -> Result<TcpStream> {
        let deadline = Instant::now() + timeout;
        let addr = self.addrs[idx];
        loop {
            match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    debug!("node {}: connected to node {node} at {addr}", self.shared.node_id);
                    return Ok(s);
                }
                Err(e) if Instant::now() >= deadline || self.shared.stopping() => {
                    return Err(Error::PeerUnreachable { node, reason: format!("{addr}: {e}") });
                }
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    pub(crate) fn ensure_connected(&self, idx: usize, node: NodeId, timeout: Duration) -> Result<()> {
        let mut slot = self.peers[idx].lock().unwrap();
        if slot.is_none() {
            *slot = Some(self.connect(idx, node, timeout)?);
        }
        Ok(())
    }

    pub(crate) fn is_connected(&self, idx: usize) -> bool {
        self.peers[idx].lock().unwrap().is_some()
    }

    pub(crate) fn send(&self, idx: usize, node: NodeId, packet: &[u8]) -> Result<()> {
        let mut frame = Vec::with_capacity(FRAME_PREFIX_BYTES + packet.len());
        frame.extend_from_slice(&(packet.len() as u32).to_le_bytes());
        frame.extend_from_slice(packet);

        let mut slot = self.peers[idx].lock().unwrap();
        if slot.is_none() {
            *slot = Some(self.connect(idx, node, self.connect_timeout)?);
        }
        let stream = slot.as_mut().unwrap();
        if let Err(e) = stream.write_all(&frame) {
            *slot = None;
            return Err(Error::PeerUnreachable { node, reason: e.to_string() });
        }
        self.shared.stats.record_sent(idx, frame.len());
        Ok(())
    }

    pub(crate) fn close_all(&self) {
        for p in &self.peers {
            if let Some(s) = p.lock().unwrap().take() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
        for s in self.accepted.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    pub(crate) fn join_readers(&self) {
        let readers: Vec<_> = self.readers.lock().unwrap().drain(..).collect();
        for r in readers {
            let _ = r.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    accepted: Arc<Mutex<Vec<TcpStream>>>,
    readers: Arc<Mutex<Vec<JoinHandle<()>>>>,
) {
    while !shared.stopping() {
        match listener.accept() {
            Ok((stream, peer)) => {
                let setup = stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.set_nodelay(true))
                    .and_then(|_| stream.try_clone());
                let clone = match setup {
                    Ok(c) => c,
                    Err(e) => {
                        warn!("node {}: dropping connection from {peer}: {e}", shared.node_id);
                        continue;
                    }
                };
                accepted.lock().unwrap().push(clone);
                let shared = shared.clone();
                let name = format!("shoal-tcp-rx-{}", shared.node_id);
                match thread::Builder::new().name(name).spawn(move || read_frames(stream, &shared)) {
                    Ok(h) => readers.lock().unwrap().push(h),
                    Err(e) => warn!("cannot spawn reader for {peer}: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                warn!("node {}: accept failed: {e}", shared.node_id);
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

/// Reads until `buf` is full or the stream ends; returns bytes read.
fn fill(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

fn read_frames(stream: TcpStream, shared: &Shared) {
    let mut r = BufReader::with_capacity(64 * 1024, stream);
    let mut body = vec![0u8; MAX_PACKET_BYTES];
    loop {
        let mut prefix = [0u8; FRAME_PREFIX_BYTES];
        match fill(&mut r, &mut prefix) {
            Ok(0) => return,
            Ok(FRAME_PREFIX_BYTES) => {}
            Ok(_) | Err(_) if shared.stopping() => return,
            Ok(n) => {
                shared.stats.record_decode_error();
                warn!("node {}: connection closed inside frame prefix ({n} bytes)", shared.node_id);
                return;
            }
            Err(e) => {
                warn!("node {}: read error: {e}", shared.node_id);
                return;
            }
        }
        let len = u32::from_le_bytes(prefix) as usize;
        if !(BASE_HEADER_BYTES..=MAX_PACKET_BYTES).contains(&len) {
            // no way to resynchronise a byte stream after a bad length
            shared.stats.record_decode_error();
            warn!("node {}: bad frame length {len}, closing connection", shared.node_id);
            return;
        }
        match fill(&mut r, &mut body[..len]) {
            Ok(n) if n == len => shared.receive(&body[..len]),
            Ok(_) | Err(_) if shared.stopping() => return,
            Ok(n) => {
                shared.stats.record_decode_error();
                warn!("node {}: truncated frame, {n} of {len} bytes", shared.node_id);
                return;
            }
            Err(e) => {
                warn!("node {}: read error: {e}", shared.node_id);
                return;
            }
        }
    }
}
