//! Nodes, kernels and their message engines.
//!
//! A [`Node`] hosts the kernels the cluster map places on it. Each kernel
//! runs its body on its own thread and has a paired engine thread that
//! processes everything arriving for it. [`LocalCluster`] wires several
//! nodes together inside one process, which is how the tests and the
//! loopback benchmarks run multi-node topologies.

mod engine;
mod events;
mod handlers;
mod kernel;
mod state;

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

pub use events::{timestamp_ns, Event, EventLog};
pub use handlers::{is_reserved, HandlerCall, HandlerFn, FIRST_RESERVED_HANDLER, NOOP_HANDLER};
pub use kernel::{Kernel, BARRIER_ROOT, MAX_GET_BYTES};
pub use state::{Diagnostic, RemoteFault};

use crate::cluster::{ClusterMap, NodeId, TransportKind};
use crate::error::{Error, Result};
use crate::memory::Partition;
use crate::protocol::{HandlerId, KernelId, Packet};
use crate::transport::{BoundSockets, StatsSnapshot, Transport, TransportOptions};
use engine::Engine;
use state::KernelShared;

#[derive(Debug, Clone)]
pub struct NodeOptions {
    /// Keep event records in memory (see [`Node::events`]).
    pub event_log: bool,
    /// Also write the event log to this file. Overrides the map's template.
    pub event_log_path: Option<PathBuf>,
    /// Deadline for blocking kernel calls; `None` waits forever.
    pub default_timeout: Option<Duration>,
    pub connect_timeout: Duration,
}

impl Default for NodeOptions {
    fn default() -> Self {
        NodeOptions {
            event_log: false,
            event_log_path: None,
            default_timeout: None,
            connect_timeout: TransportOptions::default().connect_timeout,
        }
    }
}

struct LocalKernel {
    shared: Arc<KernelShared>,
    inbox: Option<Receiver<Packet>>,
    stop: Option<Sender<()>>,
    engine: Option<JoinHandle<()>>,
    spawned: bool,
    finished: Arc<Mutex<bool>>,
}

pub(crate) struct NodeShared {
    pub node_id: NodeId,
    pub map: Arc<ClusterMap>,
    pub options: NodeOptions,
    pub transport: Arc<Transport>,
    pub events: Arc<EventLog>,
    diagnostics: Arc<Mutex<Vec<Diagnostic>>>,
    kernels: Mutex<HashMap<KernelId, LocalKernel>>,
}

/// One node of the cluster. Cheap to clone; clones share the node.
#[derive(Clone)]
pub struct Node {
    inner: Arc<NodeShared>,
}

/// Handle on a spawned kernel body.
pub struct KernelHandle<R> {
    id: KernelId,
    thread: JoinHandle<R>,
}

impl<R> KernelHandle<R> {
    pub fn id(&self) -> KernelId {
        self.id
    }

    pub fn is_finished(&self) -> bool {
        self.thread.is_finished()
    }

    /// Waits for the body to return. A panicking body is re-raised here.
    pub fn join(self) -> R {
        match self.thread.join() {
            Ok(r) => r,
            Err(p) => std::panic::resume_unwind(p),
        }
    }
}

impl Node {
    /// Initialises `node_id` with default options, binding listeners as
    /// the map requires.
    pub fn init(map: ClusterMap, node_id: NodeId) -> Result<Node> {
        Self::init_with(map, node_id, NodeOptions::default())
    }

    pub fn init_with(map: ClusterMap, node_id: NodeId, options: NodeOptions) -> Result<Node> {
        map.validate()?;
        if map.node(node_id).is_none() {
            return Err(Error::ConfigInvalid(format!("node {node_id} not in cluster map")));
        }
        let sockets = BoundSockets::for_node(&map, node_id)?;
        Self::start(map, node_id, sockets, options)
    }

    /// Starts a node on listeners the caller already bound.
    pub fn start(map: ClusterMap, node_id: NodeId, sockets: BoundSockets, options: NodeOptions) -> Result<Node> {
        map.validate()?;
        if map.node(node_id).is_none() {
            return Err(Error::ConfigInvalid(format!("node {node_id} not in cluster map")));
        }
        let log_path = options
            .event_log_path
            .clone()
            .or_else(|| map.event_log.as_ref().map(|t| PathBuf::from(t.replace("{node}", &node_id.to_string()))));
        let events = EventLog::new(options.event_log, log_path.as_deref())
            .map_err(|e| Error::ConfigInvalid(format!("event log: {e}")))?;
        let map = Arc::new(map);
        let mut kernels = HashMap::new();
        let mut inboxes = HashMap::new();
        for entry in map.kernels_on(node_id) {
            let id = KernelId(entry.id);
            let (tx, rx) = unbounded();
            inboxes.insert(id, tx);
            kernels.insert(
                id,
                LocalKernel {
                    shared: Arc::new(KernelShared::new(id, entry.partition_bytes)),
                    inbox: Some(rx),
                    stop: None,
                    engine: None,
                    spawned: false,
                    finished: Arc::new(Mutex::new(false)),
                },
            );
        }
        let transport = Transport::start(
            map.clone(),
            node_id,
            inboxes,
            sockets,
            TransportOptions { connect_timeout: options.connect_timeout },
        )?;
        Ok(Node {
            inner: Arc::new(NodeShared {
                node_id,
                map,
                options,
                transport: Arc::new(transport),
                events: Arc::new(events),
                diagnostics: Arc::default(),
                kernels: Mutex::new(kernels),
            }),
        })
    }

    pub fn node_id(&self) -> NodeId {
        self.inner.node_id
    }

    pub fn map(&self) -> &ClusterMap {
        &self.inner.map
    }

    /// Ids of the kernels this node hosts, ascending.
    pub fn local_kernels(&self) -> Vec<KernelId> {
        let mut ids: Vec<_> = self.inner.kernels.lock().unwrap().keys().copied().collect();
        ids.sort();
        ids
    }

    /// Opens connections to every peer node, retrying until `timeout`.
    pub fn wait_connected(&self, timeout: Duration) -> Result<()> {
        self.inner.transport.connect_all(timeout)
    }

    pub fn is_connected(&self) -> bool {
        self.inner.transport.is_connected()
    }

    fn with_kernel<T>(&self, id: KernelId, f: impl FnOnce(&mut LocalKernel) -> Result<T>) -> Result<T> {
        let mut kernels = self.inner.kernels.lock().unwrap();
        match kernels.get_mut(&id) {
            Some(k) => f(k),
            None if self.inner.map.kernel(id).is_some() => Err(Error::NotLocal(id)),
            None => Err(Error::UnknownKernel(id)),
        }
    }

    /// Starts `body` for kernel `id` together with its message engine.
    pub fn spawn<R, F>(&self, id: KernelId, body: F) -> Result<KernelHandle<R>>
    where
        F: FnOnce(&mut Kernel) -> R + Send + 'static,
        R: Send + 'static,
    {
        let (shared, finished) = self.with_kernel(id, |k| {
            if k.spawned {
                return Err(Error::DuplicateKernel(id));
            }
            let inbox = k.inbox.take().expect("inbox present until first spawn");
            let (stop_tx, stop_rx) = unbounded();
            let engine = Engine {
                kernel: k.shared.clone(),
                transport: self.inner.transport.clone(),
                events: self.inner.events.clone(),
                diagnostics: self.inner.diagnostics.clone(),
            };
            k.engine =
                Some(thread::Builder::new().name(format!("engine-{id}")).spawn(move || engine.run(inbox, stop_rx))?);
            k.stop = Some(stop_tx);
            k.spawned = true;
            Ok((k.shared.clone(), k.finished.clone()))
        })?;
        let node = self.inner.clone();
        let thread = thread::Builder::new().name(format!("kernel-{id}")).spawn(move || {
            struct Done(Arc<Mutex<bool>>);
            impl Drop for Done {
                fn drop(&mut self) {
                    *self.0.lock().unwrap() = true;
                }
            }
            let _done = Done(finished);
            let mut kernel = Kernel::new(node, shared);
            body(&mut kernel)
        })?;
        Ok(KernelHandle { id, thread })
    }

    /// Registers a handler on a local kernel before (or after) it is spawned.
    pub fn register_handler(
        &self,
        kernel: KernelId,
        id: HandlerId,
        f: impl Fn(&HandlerCall<'_>) + Send + Sync + 'static,
    ) -> Result<()> {
        self.with_kernel(kernel, |k| k.shared.handlers.write().unwrap().register(id, Arc::new(f)))
    }

    pub fn partition(&self, kernel: KernelId) -> Result<Arc<Partition>> {
        self.with_kernel(kernel, |k| Ok(k.shared.partition.clone()))
    }

    /// True once the body of local kernel `id` has returned.
    pub fn kernel_finished(&self, id: KernelId) -> Result<bool> {
        self.with_kernel(id, |k| Ok(*k.finished.lock().unwrap()))
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.inner.transport.stats()
    }

    /// Records kept in memory; empty unless `NodeOptions::event_log` is set.
    pub fn events(&self) -> Vec<Event> {
        self.inner.events.records()
    }

    /// Problems the engines ran into (unknown handlers, bad offsets, ...).
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.inner.diagnostics.lock().unwrap().clone()
    }

    /// Stops engines and transport. Blocked kernel calls return SHUTDOWN.
    /// Safe to call more than once.
    pub fn shutdown(&self) {
        let engines: Vec<_> = {
            let mut kernels = self.inner.kernels.lock().unwrap();
            kernels
                .values_mut()
                .map(|k| {
                    k.shared.update(|st| st.shutdown = true);
                    k.stop.take();
                    k.engine.take()
                })
                .collect()
        };
        for e in engines.into_iter().flatten() {
            let _ = e.join();
        }
        self.inner.transport.shutdown();
        self.inner.events.flush();
    }
}

impl Drop for NodeShared {
    fn drop(&mut self) {
        self.transport.shutdown();
        self.events.flush();
    }
}

/// Several nodes in one process, connected over loopback.
pub struct LocalCluster {
    nodes: Vec<Node>,
}

impl LocalCluster {
    /// Kernel `i` goes to node `placement[i]`. Node ids must be dense from 0.
    pub fn start(placement: &[NodeId], transport: TransportKind, options: NodeOptions) -> Result<Self> {
        let nodes = placement.iter().copied().max().map_or(1, |m| m as usize + 1);
        let map = ClusterMap::loopback(placement, &vec![(0, 0); nodes], transport);
        Self::start_with_map(map, options)
    }

    /// Starts every node of `template` in this process. Ports in the
    /// template are ignored: each node binds a free port and the map is
    /// rewritten before any node starts.
    pub fn start_with_map(mut map: ClusterMap, options: NodeOptions) -> Result<Self> {
        map.validate()?;
        let multi = map.nodes.len() > 1;
        let mut sockets = Vec::new();
        for node in &mut map.nodes {
            let s = if multi {
                let s = BoundSockets::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, 0)), map.transport)?;
                let port = s.local_port().unwrap_or(0);
                node.host = "127.0.0.1".into();
                match map.transport {
                    TransportKind::Tcp => node.tcp_port = port,
                    TransportKind::Udp => node.udp_port = port,
                }
                s
            } else {
                BoundSockets::default()
            };
            sockets.push(s);
        }
        let ids: Vec<_> = map.nodes.iter().map(|n| n.node_id).collect();
        let mut nodes = Vec::new();
        for (id, s) in ids.into_iter().zip(sockets) {
            nodes.push(Node::start(map.clone(), id, s, options.clone())?);
        }
        for n in &nodes {
            n.wait_connected(options.connect_timeout)?;
        }
        Ok(LocalCluster { nodes })
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes.iter().find(|n| n.node_id() == id).expect("node id in cluster")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn kernel_count(&self) -> usize {
        self.nodes[0].map().kernel_count()
    }

    /// Node hosting `kernel`.
    pub fn node_of(&self, kernel: KernelId) -> &Node {
        let id = self.nodes[0].map().node_of(kernel).expect("kernel in cluster");
        self.node(id)
    }

    /// Runs `body` on every kernel and returns the results by kernel id.
    pub fn run<R, F>(&self, body: F) -> Result<Vec<R>>
    where
        F: Fn(&mut Kernel) -> R + Send + Sync + 'static,
        R: Send + 'static,
    {
        let body = Arc::new(body);
        let mut handles = Vec::new();
        for k in 0..self.kernel_count() as u16 {
            let id = KernelId(k);
            let b = body.clone();
            handles.push(self.node_of(id).spawn(id, move |kernel| b(kernel))?);
        }
        Ok(handles.into_iter().map(KernelHandle::join).collect())
    }

    /// Sum of all nodes' transport counters.
    pub fn network_bytes(&self) -> u64 {
        self.nodes.iter().map(|n| n.stats().network_bytes()).sum()
    }

    pub fn events(&self) -> Vec<Event> {
        let mut all: Vec<_> = self.nodes.iter().flat_map(Node::events).collect();
        all.sort_by_key(|e| e.timestamp_ns);
        all
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.nodes.iter().flat_map(Node::diagnostics).collect()
    }

    pub fn shutdown(&self) {
        for n in &self.nodes {
            n.shutdown();
        }
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Polls `f` until it returns true or `timeout` passes.
pub fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if f() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        thread::sleep(Duration::from_millis(1));
    }
}
