//! Packet routing between nodes.
//!
//! The [`Transport`] owns one node's network drivers. Packets addressed to
//! a kernel on the same node go straight into that kernel's inbox and never
//! touch a socket; everything else is encoded and handed to the TCP or UDP
//! driver named by the cluster map.

mod stats;
mod tcp;
mod udp;

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::Sender;
use log::warn;

pub use stats::{PeerStats, StatsSnapshot, TransportStats};

use crate::cluster::{ClusterMap, NodeId, TransportKind};
use crate::error::{Error, Result};
use crate::protocol::{decode_packet, KernelId, Packet};

/// Where decoded packets for one local kernel are delivered.
pub type Inbox = Sender<Packet>;

#[derive(Debug, Clone)]
pub struct TransportOptions {
    /// How long a lazy TCP connect keeps retrying before PEER_UNREACHABLE.
    pub connect_timeout: Duration,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { connect_timeout: Duration::from_secs(10) }
    }
}

/// Listening sockets for one node, bound before the transport starts.
#[derive(Debug, Default)]
pub struct BoundSockets {
    pub tcp: Option<TcpListener>,
    pub udp: Option<UdpSocket>,
}

impl BoundSockets {
    /// Binds the listener for `kind` on `addr`. Port 0 picks a free port.
    pub fn bind(addr: SocketAddr, kind: TransportKind) -> Result<Self> {
        let fail = |source| Error::BindFailure { addr: addr.to_string(), source };
        match kind {
            TransportKind::Tcp => Ok(BoundSockets { tcp: Some(TcpListener::bind(addr).map_err(fail)?), udp: None }),
            TransportKind::Udp => Ok(BoundSockets { tcp: None, udp: Some(udp::bind(addr).map_err(fail)?) }),
        }
    }

    /// Binds whatever `node_id` needs according to `map`. Single-node
    /// clusters need no sockets at all.
    pub fn for_node(map: &ClusterMap, node_id: NodeId) -> Result<Self> {
        if map.nodes.len() < 2 {
            return Ok(BoundSockets::default());
        }
        let entry =
            map.node(node_id).ok_or_else(|| Error::ConfigInvalid(format!("node {node_id} not in cluster map")))?;
        let addr = match map.transport {
            TransportKind::Tcp => entry.tcp_addr(),
            TransportKind::Udp => entry.udp_addr(),
        }
        .ok_or_else(|| Error::ConfigInvalid(format!("cannot resolve host {:?}", entry.host)))?;
        Self::bind(addr, map.transport)
    }

    pub fn local_port(&self) -> Option<u16> {
        self.tcp
            .as_ref()
            .and_then(|l| l.local_addr().ok())
            .or_else(|| self.udp.as_ref().and_then(|s| s.local_addr().ok()))
            .map(|a| a.port())
    }
}

pub(crate) struct Shared {
    node_id: NodeId,
    map: Arc<ClusterMap>,
    inboxes: HashMap<KernelId, Inbox>,
    stats: TransportStats,
    stop: AtomicBool,
}

impl Shared {
    fn peer_index_of_kernel(&self, k: KernelId) -> Option<usize> {
        self.map.node_of(k).and_then(|n| self.map.node_index(n))
    }

    /// Decodes one frame off the wire and routes it to a local inbox.
    fn receive(&self, bytes: &[u8]) {
        let packet = match decode_packet(bytes) {
            Ok(p) => p,
            Err(e) => {
                self.stats.record_decode_error();
                warn!("node {}: dropping undecodable frame: {e}", self.node_id);
                return;
            }
        };
        if let Some(idx) = self.peer_index_of_kernel(packet.header.src) {
            self.stats.record_received(idx, bytes.len());
        }
        self.deliver(packet);
    }

    fn deliver(&self, packet: Packet) {
        let dst = packet.header.dst;
        match self.inboxes.get(&dst) {
            Some(inbox) if inbox.send(packet).is_ok() => {}
            _ => {
                self.stats.record_dropped();
                warn!("node {}: no local kernel {dst}, packet dropped", self.node_id);
            }
        }
    }

    fn stopping(&self) -> bool {
        self.stop.load(Ordering::Acquire)
    }
}

enum Driver {
    None,
    Tcp(tcp::TcpDriver),
    Udp(udp::UdpDriver),
}

pub struct Transport {
    shared: Arc<Shared>,
    driver: Driver,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Transport {
    /// Starts the receive side of every driver the node needs.
    pub fn start(
        map: Arc<ClusterMap>,
        node_id: NodeId,
        inboxes: HashMap<KernelId, Inbox>,
        sockets: BoundSockets,
        options: TransportOptions,
    ) -> Result<Self> {
        if map.node(node_id).is_none() {
            return Err(Error::ConfigInvalid(format!("node {node_id} not in cluster map")));
        }
        let shared = Arc::new(Shared {
            node_id,
            stats: TransportStats::new(map.nodes.len()),
            map: map.clone(),
            inboxes,
            stop: AtomicBool::new(false),
        });
        let mut threads = Vec::new();
        let driver = if map.nodes.len() < 2 {
            Driver::None
        } else {
            let resolve = |f: fn(&crate::cluster::NodeEntry) -> Option<SocketAddr>| {
                map.nodes
                    .iter()
                    .map(|n| f(n).ok_or_else(|| Error::ConfigInvalid(format!("cannot resolve host {:?}", n.host))))
                    .collect::<Result<Vec<_>>>()
            };
            match map.transport {
                TransportKind::Tcp => {
                    let listener = sockets
                        .tcp
                        .ok_or_else(|| Error::ConfigInvalid("TCP cluster needs a bound TCP listener".into()))?;
                    let addrs = resolve(|n| n.tcp_addr())?;
                    let (d, t) = tcp::TcpDriver::start(listener, addrs, shared.clone(), options.connect_timeout)?;
                    threads.push(t);
                    Driver::Tcp(d)
                }
                TransportKind::Udp => {
                    let socket = sockets
                        .udp
                        .ok_or_else(|| Error::ConfigInvalid("UDP cluster needs a bound UDP socket".into()))?;
                    let addrs = resolve(|n| n.udp_addr())?;
                    let (d, t) = udp::UdpDriver::start(socket, addrs, map.udp_max_bytes, shared.clone())?;
                    threads.push(t);
                    Driver::Udp(d)
                }
            }
        };
        Ok(Transport { shared, driver, threads: Mutex::new(threads) })
    }

    pub fn node_id(&self) -> NodeId {
        self.shared.node_id
    }

    pub fn map(&self) -> &ClusterMap {
        &self.shared.map
    }

    /// Routes `packet` to its destination kernel. Same-node destinations
    /// are delivered in-process with zero network bytes.
    pub fn send_packet(&self, packet: Packet) -> Result<()> {
        packet.check()?;
        let dst = packet.header.dst;
        let node = self.shared.map.node_of(dst).ok_or(Error::UnknownKernel(dst))?;
        if node == self.shared.node_id {
            self.shared.stats.record_local();
            self.shared.deliver(packet);
            return Ok(());
        }
        let idx = self.shared.map.node_index(node).expect("validated map");
        let bytes = packet.encode()?;
        match &self.driver {
            Driver::Tcp(d) => d.send(idx, node, &bytes),
            Driver::Udp(d) => d.send(idx, &bytes),
            Driver::None => Err(Error::PeerUnreachable { node, reason: "no network driver".into() }),
        }
    }

    /// Establishes connections to every peer, retrying until `timeout`.
    /// Connectionless drivers return immediately.
    pub fn connect_all(&self, timeout: Duration) -> Result<()> {
        match &self.driver {
            Driver::Tcp(d) => {
                for (idx, n) in self.shared.map.nodes.iter().enumerate() {
                    if n.node_id != self.shared.node_id {
                        d.ensure_connected(idx, n.node_id, timeout)?;
                    }
                }
                Ok(())
            }
            Driver::Udp(_) | Driver::None => Ok(()),
        }
    }

    pub fn is_connected(&self) -> bool {
        match &self.driver {
            Driver::Tcp(d) => self
                .shared
                .map
                .nodes
                .iter()
                .enumerate()
                .all(|(idx, n)| n.node_id == self.shared.node_id || d.is_connected(idx)),
            Driver::Udp(_) | Driver::None => true,
        }
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.stats.snapshot(&self.shared.map)
    }

    pub fn shutdown(&self) {
        if self.shared.stop.swap(true, Ordering::AcqRel) {
            return;
        }
        if let Driver::Tcp(d) = &self.driver {
            d.close_all();
        }
        let threads: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
        if let Driver::Tcp(d) = &self.driver {
            d.join_readers();
        }
    }
}

impl Drop for Transport {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{AmClass, AmHeader};
    use crossbeam_channel::{unbounded, Receiver};

    fn medium(src: u16, dst: u16, payload: Vec<u8>) -> Packet {
        let mut h = AmHeader::new(AmClass::Medium, KernelId(src), KernelId(dst), 1);
        h.flags.fifo = true;
        h.payload_len = payload.len() as u32;
        Packet::new(h, payload)
    }

    /// Two transports on 127.0.0.1; kernel i lives on node i.
    fn pair(kind: TransportKind, udp_cap: usize) -> (Vec<Transport>, Vec<Receiver<Packet>>) {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let socks: Vec<_> = (0..2).map(|_| BoundSockets::bind(any, kind).unwrap()).collect();
        let ports: Vec<_> = socks.iter().map(|s| s.local_port().unwrap()).map(|p| (p, p)).collect();
        let mut map = ClusterMap::loopback(&[0, 1], &ports, kind);
        map.udp_max_bytes = udp_cap;
        let map = Arc::new(map);
        let mut rxs = Vec::new();
        let mut ts = Vec::new();
        for (i, s) in socks.into_iter().enumerate() {
            let (tx, rx) = unbounded();
            rxs.push(rx);
            let inboxes = HashMap::from([(KernelId(i as u16), tx)]);
            ts.push(Transport::start(map.clone(), i as NodeId, inboxes, s, TransportOptions::default()).unwrap());
        }
        (ts, rxs)
    }

    #[test]
    fn local_delivery_uses_no_network() {
        let map = Arc::new(ClusterMap::loopback(&[0, 0], &[(1, 1)], TransportKind::Tcp));
        let (tx, rx) = unbounded();
        let inboxes = HashMap::from([(KernelId(1), tx)]);
        let t = Transport::start(map, 0, inboxes, BoundSockets::default(), TransportOptions::default()).unwrap();
        t.send_packet(medium(0, 1, vec![7; 16])).unwrap();
        assert_eq!(rx.recv().unwrap().payload, vec![7; 16]);
        let s = t.stats();
        assert_eq!(s.network_bytes(), 0);
        assert_eq!(s.local_packets, 1);
        assert!(t.is_connected());
    }

    #[test]
    fn tcp_large_payload_intact_and_ordered() {
        let (ts, rxs) = pair(TransportKind::Tcp, 8972);
        ts[0].connect_all(Duration::from_secs(5)).unwrap();
        let payload: Vec<u8> = (0..4096).map(|i| (i * 31) as u8).collect();
        ts[0].send_packet(medium(0, 1, payload.clone())).unwrap();
        for i in 0..100u8 {
            ts[0].send_packet(medium(0, 1, vec![i])).unwrap();
        }
        assert_eq!(rxs[1].recv_timeout(Duration::from_secs(5)).unwrap().payload, payload);
        for i in 0..100u8 {
            assert_eq!(rxs[1].recv_timeout(Duration::from_secs(5)).unwrap().payload, vec![i]);
        }
        let s0 = ts[0].stats();
        assert_eq!(s0.per_peer[&1].packets_sent, 101);
        assert!(s0.network_bytes() > 4096);
        let s1 = ts[1].stats();
        assert_eq!(s1.per_peer[&0].packets_received, 101);
    }

    #[test]
    fn udp_respects_datagram_cap() {
        let (ts, rxs) = pair(TransportKind::Udp, 1500);
        match ts[0].send_packet(medium(0, 1, vec![0; 2048])) {
            Err(Error::UdpFragmentLimit { len: 2080, cap: 1500 }) => {}
            other => panic!("{other:?}"),
        }
        ts[0].send_packet(medium(0, 1, vec![5; 1024])).unwrap();
        assert_eq!(rxs[1].recv_timeout(Duration::from_secs(5)).unwrap().payload, vec![5; 1024]);
    }

    #[test]
    fn udp_unknown_kernel_and_garbage_are_counted() {
        let (ts, _rxs) = pair(TransportKind::Udp, 8972);
        let peer = ts[1].map().node(1).unwrap().udp_addr().unwrap();
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        // addressed to kernel 0, which node 1 does not host
        let bytes = medium(1, 0, vec![1, 2]).encode().unwrap();
        sock.send_to(&bytes, peer).unwrap();
        sock.send_to(&[1, 2, 3], peer).unwrap();
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        loop {
            let s = ts[1].stats();
            if s.dropped_packets == 1 && s.decode_errors == 1 {
                break;
            }
            assert!(std::time::Instant::now() < deadline, "{s:?}");
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    #[test]
    fn tcp_truncated_frame_is_a_decode_error() {
        use std::io::Write;
        let (ts, _rxs) = pair(TransportKind::Tcp, 8972);
        let peer = ts[1].map().node(1).unwrap().tcp_addr().unwrap();
        let mut s = std::net::TcpStream::connect(peer).unwrap();
        let bytes = medium(0, 1, vec![9; 64]).encode().unwrap();
        s.write_all(&(bytes.len() as u32).to_le_bytes()).unwrap();
        s.write_all(&bytes[..40]).unwrap();
        drop(s);
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        while ts[1].stats().decode_errors != 1 {
            assert!(std::time::Instant::now() < deadline);
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    #[test]
    fn unreachable_peer_reported() {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let s = BoundSockets::bind(any, TransportKind::Tcp).unwrap();
        let p = s.local_port().unwrap();
        // node 1's port: bind then drop to get a port nobody listens on
        let dead = TcpListener::bind(any).unwrap().local_addr().unwrap().port();
        let map = Arc::new(ClusterMap::loopback(&[0, 1], &[(p, p), (dead, dead)], TransportKind::Tcp));
        let (tx, _rx) = unbounded();
        let opts = TransportOptions { connect_timeout: Duration::from_millis(200) };
        let t = Transport::start(map, 0, HashMap::from([(KernelId(0), tx)]), s, opts).unwrap();
        assert!(matches!(t.send_packet(medium(0, 1, vec![1])), Err(Error::PeerUnreachable { node: 1, .. })));
        assert!(!t.is_connected());
    }

    #[test]
    fn oversize_rejected_before_routing() {
        let map = Arc::new(ClusterMap::loopback(&[0], &[(1, 1)], TransportKind::Tcp));
        let (tx, _rx) = unbounded();
        let t = Transport::start(
            map,
            0,
            HashMap::from([(KernelId(0), tx)]),
            BoundSockets::default(),
            TransportOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            t.send_packet(medium(0, 0, vec![0; 9000])),
            Err(Error::Protocol(crate::protocol::ProtocolError::Oversize { .. }))
        ));
    }
}
