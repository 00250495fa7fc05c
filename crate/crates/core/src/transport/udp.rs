//! UDP driver: one packet per datagram, no retransmission. Datagrams larger
//! than the configured cap are refused with UDP_FRAGMENT_LIMIT instead of
//! being left to IP fragmentation.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::warn;
use socket2::{Domain, Protocol, Socket, Type};

use super::Shared;
use crate::error::{Error, Result};

const SOCKET_BUFFER_BYTES: usize = 8 * 1024 * 1024;

pub(crate) fn bind(addr: SocketAddr) -> io::Result<UdpSocket> {
    let socket = Socket::new(Domain::for_address(addr), Type::DGRAM, Some(Protocol::UDP))?;
    // best effort; the kernel clamps to its configured maximum
    let _ = socket.set_recv_buffer_size(SOCKET_BUFFER_BYTES);
    let _ = socket.set_send_buffer_size(SOCKET_BUFFER_BYTES);
    socket.bind(&addr.into())?;
    Ok(socket.into())
}

pub(crate) struct UdpDriver {
    socket: UdpSocket,
    addrs: Vec<SocketAddr>,
    max_bytes: usize,
    shared: Arc<Shared>,
}

impl UdpDriver {
    pub(crate) fn start(
        socket: UdpSocket,
        addrs: Vec<SocketAddr>,
        max_bytes: usize,
        shared: Arc<Shared>,
    ) -> Result<(Self, JoinHandle<()>)> {
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let rx = socket.try_clone()?;
        let handle = {
            let shared = shared.clone();
            thread::Builder::new()
                .name(format!("shoal-udp-rx-{}", shared.node_id))
                .spawn(move || recv_loop(rx, &shared))?
        };
        Ok((UdpDriver { socket, addrs, max_bytes, shared }, handle))
    }

    pub(crate) fn send(&self, idx: usize, packet: &[u8]) -> Result<()> {
        if packet.len() > self.max_bytes {
            return Err(Error::UdpFragmentLimit { len: packet.len(), cap: self.max_bytes });
        }
        let node = self.shared.map.nodes[idx].node_id;
        self.socket
            .send_to(packet, self.addrs[idx])
            .map_err(|e| Error::PeerUnreachable { node, reason: e.to_string() })?;
        self.shared.stats.record_sent(idx, packet.len());
        Ok(())
    }
}

fn recv_loop(socket: UdpSocket, shared: &Shared) {
    let mut buf = vec![0u8; 64 * 1024];
    while !shared.stopping() {
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => shared.receive(&buf[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => {
                warn!("node {}: udp receive failed: {e}", shared.node_id);
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}
