use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use crate::cluster::{ClusterMap, NodeId};

#[derive(Debug, Default)]
struct PeerCounters {
    packets_sent: AtomicU64,
    packets_received: AtomicU64,
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
}

/// Monotonic traffic counters for one node, kept per peer node.
///
/// Byte counts cover what crosses the socket, including TCP length
/// prefixes. In-process deliveries only bump `local_packets`.
#[derive(Debug)]
pub struct TransportStats {
    peers: Vec<PeerCounters>,
    local_packets: AtomicU64,
    decode_errors: AtomicU64,
    dropped: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeerStats {
    pub packets_sent: u64,
    pub packets_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub per_peer: BTreeMap<NodeId, PeerStats>,
    pub local_packets: u64,
    pub decode_errors: u64,
    pub dropped_packets: u64,
}

impl StatsSnapshot {
    /// Total bytes sent plus received over every network driver.
    pub fn network_bytes(&self) -> u64 {
        self.per_peer.values().map(|p| p.bytes_sent + p.bytes_received).sum()
    }
}

impl TransportStats {
    pub fn new(peers: usize) -> Self {
        TransportStats {
            peers: (0..peers).map(|_| PeerCounters::default()).collect(),
            local_packets: AtomicU64::new(0),
            decode_errors: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn record_sent(&self, peer: usize, bytes: usize) {
        let p = &self.peers[peer];
        p.packets_sent.fetch_add(1, Relaxed);
        p.bytes_sent.fetch_add(bytes as u64, Relaxed);
    }

    pub fn record_received(&self, peer: usize, bytes: usize) {
        let p = &self.peers[peer];
        p.packets_received.fetch_add(1, Relaxed);
        p.bytes_received.fetch_add(bytes as u64, Relaxed);
    }

    pub fn record_local(&self) {
        self.local_packets.fetch_add(1, Relaxed);
    }

    pub fn record_decode_error(&self) {
        self.decode_errors.fetch_add(1, Relaxed);
    }

    pub fn record_dropped(&self) {
        self.dropped.fetch_add(1, Relaxed);
    }

    pub fn snapshot(&self, map: &ClusterMap) -> StatsSnapshot {
        StatsSnapshot {
            per_peer: map
                .nodes
                .iter()
                .zip(&self.peers)
                .map(|(n, c)| {
                    (
                        n.node_id,
                        PeerStats {
                            packets_sent: c.packets_sent.load(Relaxed),
                            packets_received: c.packets_received.load(Relaxed),
                            bytes_sent: c.bytes_sent.load(Relaxed),
                            bytes_received: c.bytes_received.load(Relaxed),
                        },
                    )
                })
                .collect(),
            local_packets: self.local_packets.load(Relaxed),
            decode_errors: self.decode_errors.load(Relaxed),
            dropped_packets: self.dropped.load(Relaxed),
        }
    }
}
