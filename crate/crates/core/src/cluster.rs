//! Cluster topology: which kernels live on which node, and how nodes reach
//! each other.

use std::collections::HashSet;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::KernelId;

pub type NodeId = u32;

pub const DEFAULT_PARTITION_BYTES: u64 = 16 * 1024 * 1024;
/// 9000-byte jumbo frame minus 20 bytes IPv4 and 8 bytes UDP header.
pub const DEFAULT_UDP_MAX_BYTES: usize = 8972;
const MAX_UDP_DATAGRAM: usize = 65507;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("PARSE_ERROR: {0}")]
    Parse(String),
    #[error("VALIDATION_ERROR: {path}: {message}")]
    Validation { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn validation(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Tcp,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub node_id: NodeId,
    pub host: String,
    pub tcp_port: u16,
    pub udp_port: u16,
}

impl NodeEntry {
    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        resolve(&self.host, self.tcp_port)
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        resolve(&self.host, self.udp_port)
    }
}

fn resolve(host: &str, port: u16) -> Option<SocketAddr> {
    (host, port).to_socket_addrs().ok()?.next()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub id: u16,
    pub node_id: NodeId,
    #[serde(default = "default_partition_bytes")]
    pub partition_bytes: u64,
}

fn default_partition_bytes() -> u64 {
    DEFAULT_PARTITION_BYTES
}

fn default_udp_max_bytes() -> usize {
    DEFAULT_UDP_MAX_BYTES
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterMap {
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default = "default_udp_max_bytes")]
    pub udp_max_bytes: usize,
    /// Event-log path; `{node}` is replaced by the node id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_log: Option<String>,
    pub nodes: Vec<NodeEntry>,
    pub kernels: Vec<KernelEntry>,
}

impl ClusterMap {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let map: ClusterMap = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cluster map serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes.is_empty() {
            return Err(validation("nodes", "at least one node is required"));
        }
        if self.kernels.is_empty() {
            return Err(validation("kernels", "at least one kernel is required"));
        }
        if !(32..=MAX_UDP_DATAGRAM).contains(&self.udp_max_bytes) {
            return Err(validation("udp_max_bytes", format!("must be in 32..={MAX_UDP_DATAGRAM}")));
        }
        let mut node_ids = HashSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !node_ids.insert(n.node_id) {
                return Err(validation(format!("nodes[{i}].node_id"), format!("duplicate node id {}", n.node_id)));
            }
            if n.host.is_empty() {
                return Err(validation(format!("nodes[{i}].host"), "empty host"));
            }
        }
        let mut seen = HashSet::new();
        for (i, k) in self.kernels.iter().enumerate() {
            if !seen.insert(k.id) {
                return Err(validation(format!("kernels[{i}].id"), format!("duplicate kernel id {}", k.id)));
            }
            if !node_ids.contains(&k.node_id) {
                return Err(validation(format!("kernels[{i}].node_id"), format!("unknown node {}", k.node_id)));
            }
            if k.partition_bytes == 0 {
                return Err(validation(format!("kernels[{i}].partition_bytes"), "must be positive"));
            }
        }
        let k = self.kernels.len();
        if let Some(i) = self.kernels.iter().position(|e| e.id as usize >= k) {
            return Err(validation(format!("kernels[{i}].id"), format!("kernel ids must be dense 0..{}", k - 1)));
        }
        Ok(())
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel(&self, id: KernelId) -> Option<&KernelEntry> {
        self.kernels.iter().find(|k| k.id == id.0)
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeEntry> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == id)
    }

    pub fn node_of(&self, kernel: KernelId) -> Option<NodeId> {
        self.kernel(kernel).map(|k| k.node_id)
    }

    pub fn kernels_on(&self, node: NodeId) -> impl Iterator<Item = &KernelEntry> {
        self.kernels.iter().filter(move |k| k.node_id == node)
    }

    /// A cluster where kernel `i` lives on node `placement[i]`; nodes listen
    /// on 127.0.0.1 with the given port pairs (index = node id).
    pub fn loopback(placement: &[NodeId], ports: &[(u16, u16)], transport: TransportKind) -> Self {
        ClusterMap {
            transport,
            udp_max_bytes: DEFAULT_UDP_MAX_BYTES,
            event_log: None,
            nodes: ports
                .iter()
                .enumerate()
                .map(|(i, &(tcp_port, udp_port))| NodeEntry {
                    node_id: i as NodeId,
                    host: "127.0.0.1".into(),
                    tcp_port,
                    udp_port,
                })
                .collect(),
            kernels: placement
                .iter()
                .enumerate()
                .map(|(i, &node_id)| KernelEntry { id: i as u16, node_id, partition_bytes: DEFAULT_PARTITION_BYTES })
                .collect(),
        }
    }
}

pub fn load_cluster_map(path: impl AsRef<Path>) -> Result<ClusterMap, ConfigError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    ClusterMap::from_toml_str(&text)
}
