//! A runtime for the PGAS active-message model.
//!
//! Kernels own a partition of the global address space and talk to each
//! other only through active messages: Short (signals), Medium (payload to
//! a queue) and Long (payload into the destination's memory), plus one-sided
//! gets and barriers. Kernels are grouped into nodes; messages between
//! kernels on the same node never leave the process, everything else goes
//! over TCP or UDP according to a [`ClusterMap`].
//!
//! ```
//! use shoal::{KernelId, LocalCluster, NodeOptions, TransportKind};
//!
//! let cluster = LocalCluster::start(&[0, 0], TransportKind::Tcp, NodeOptions::default()).unwrap();
//! let got = cluster
//!     .run(|k| {
//!         if k.id() == KernelId(0) {
//!             k.am_medium_fifo(KernelId(1), shoal::NOOP_HANDLER, &[], b"hello", false).unwrap();
//!             k.wait_replies(1).unwrap();
//!             Vec::new()
//!         } else {
//!             k.recv_payload().unwrap().1
//!         }
//!     })
//!     .unwrap();
//! assert_eq!(got[1], b"hello");
//! ```

pub mod cluster;
pub mod error;
pub mod memory;
pub mod protocol;
pub mod runtime;
pub mod transport;

pub use cluster::{load_cluster_map, ClusterMap, KernelEntry, NodeEntry, NodeId, TransportKind};
pub use error::{Error, FaultCode, Result};
pub use memory::{Layout, MemoryError, Partition};
pub use protocol::{
    AmClass, AmFlags, AmHeader, DestLayout, HandlerId, KernelId, Packet, ProtocolError, StridedSpec, VectoredSpec,
    MAX_PACKET_BYTES, REPLY_HANDLER,
};
pub use runtime::{
    Diagnostic, Event, HandlerCall, Kernel, KernelHandle, LocalCluster, Node, NodeOptions, RemoteFault, NOOP_HANDLER,
};
pub use transport::StatsSnapshot;
