//! The distributed solver: control and compute kernel bodies.
//!
//! Compute kernel partition layout, in rows of `n` doubles:
//!
//! ```text
//! 0  top ghost, even iterations      2  bottom ghost, even iterations
//! 1  top ghost, odd iterations       3  bottom ghost, odd iterations
//! 4.. owned rows (edge rows refreshed every iteration, all rows at the end)
//! ```
//!
//! Neighbours write iteration `t` rows into the parity-`t` slot, so a
//! kernel that races ahead never overwrites a ghost row still being read.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::debug;
use shoal::protocol::{BASE_HEADER_BYTES, WORD_BYTES};
use shoal::{
    ClusterMap, HandlerId, Kernel, KernelId, LocalCluster, NodeOptions, TransportKind, MAX_PACKET_BYTES, NOOP_HANDLER,
};

use crate::grid::{jacobi_step, StripState};
use crate::{bytes_to_words, words_to_bytes, JacobiConfig, JacobiError, Result};

/// Handler that records which iteration a ghost row came from.
pub const HALO_HANDLER: HandlerId = 0x0100;
const CONTROL: KernelId = KernelId(0);
const GHOST_SLOTS: usize = 4;
const GATHER_CHUNK: usize = 8192;
const CONTROL_SCRATCH: usize = 1 << 20;
const NO_TAG: u64 = u64::MAX;

/// Encoded size of one halo put: base header, the tag argument, one row.
pub fn halo_packet_bytes(n: usize) -> usize {
    BASE_HEADER_BYTES + WORD_BYTES + n * 8
}

/// Fails with HALO_TOO_LARGE when neighbouring strips would need a row
/// that does not fit in one message. A single strip exchanges nothing.
pub fn check_halo_fits(cfg: &JacobiConfig) -> Result<()> {
    let packet = halo_packet_bytes(cfg.n);
    if cfg.kernels > 1 && packet > MAX_PACKET_BYTES {
        return Err(JacobiError::HaloTooLarge { n: cfg.n, packet, limit: MAX_PACKET_BYTES });
    }
    Ok(())
}

fn row_bytes(cfg: &JacobiConfig) -> u64 {
    cfg.n as u64 * 8
}

fn owned_offset(cfg: &JacobiConfig) -> u64 {
    GHOST_SLOTS as u64 * row_bytes(cfg)
}

/// Partition bytes needed by the control kernel and by each compute kernel.
pub fn partition_bytes(cfg: &JacobiConfig) -> (u64, u64) {
    let compute = (GHOST_SLOTS + cfg.rows_per_kernel()) as u64 * row_bytes(cfg);
    (CONTROL_SCRATCH as u64, compute)
}

fn check_partitions(cfg: &JacobiConfig, size_of: impl Fn(KernelId) -> Option<u64>) -> Result<()> {
    let (control, compute) = partition_bytes(cfg);
    for id in 0..=cfg.kernels as u16 {
        let need = if id == 0 { GATHER_CHUNK as u64 } else { compute };
        let have = size_of(KernelId(id)).ok_or_else(|| JacobiError::Config(format!("no kernel {id} in cluster")))?;
        if have < need {
            return Err(JacobiError::Config(format!(
                "kernel {id} partition is {have} bytes, needs {}",
                if id == 0 { control } else { compute }
            )));
        }
    }
    Ok(())
}

/// Checks `map` can host `cfg`: exactly K+1 kernels with enough memory.
pub fn check_map(cfg: &JacobiConfig, map: &ClusterMap) -> Result<()> {
    cfg.validate()?;
    check_halo_fits(cfg)?;
    if map.kernel_count() != cfg.kernels + 1 {
        return Err(JacobiError::Config(format!(
            "{} compute kernels need {} kernels in the cluster map, found {}",
            cfg.kernels,
            cfg.kernels + 1,
            map.kernel_count()
        )));
    }
    check_partitions(cfg, |id| map.kernel(id).map(|k| k.partition_bytes))
}

fn f64s_to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn bytes_to_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelTiming {
    pub kernel: u16,
    /// Time spent in the stencil update.
    pub compute_ns: u64,
    /// Halo exchange, reply waits and barriers.
    pub sync_ns: u64,
    /// The whole iteration loop, initial exchange included.
    pub total_ns: u64,
}

#[derive(Debug, Clone)]
pub struct JacobiReport {
    pub config: JacobiConfig,
    /// Final row-major grid as gathered by the control kernel.
    pub grid: Vec<f64>,
    /// Sum of all cells.
    pub checksum: f64,
    /// One entry per compute kernel, by kernel id.
    pub timings: Vec<KernelTiming>,
    /// Control kernel's view, from broadcast to the end of the gather.
    pub elapsed_ns: u64,
    /// Bytes the transports put on the wire during the run, when known.
    pub network_bytes: Option<u64>,
}

struct Ctx {
    cfg: JacobiConfig,
    idx: usize,
    tags: Arc<Mutex<[u64; GHOST_SLOTS]>>,
}

impl Ctx {
    fn upper(&self) -> Option<KernelId> {
        (self.idx > 0).then_some(KernelId(self.idx as u16))
    }

    fn lower(&self) -> Option<KernelId> {
        (self.idx + 1 < self.cfg.kernels).then(|| KernelId(self.idx as u16 + 2))
    }
}

/// Publishes the strip's edge rows into the neighbours' ghost slots for
/// iteration `strip.iteration` and waits until both puts are confirmed.
pub fn halo_exchange(strip: &StripState, k: &mut Kernel, cfg: &JacobiConfig) -> Result<()> {
    check_halo_fits(cfg)?;
    let idx = k.id().0 as usize - 1;
    let rb = row_bytes(cfg);
    let base = owned_offset(cfg);
    let last = base + (strip.rows() as u64 - 1) * rb;
    let tag = strip.iteration;
    let parity = tag % 2;
    let mut sent = 0;
    if idx > 0 {
        k.partition().write(base, &f64s_to_bytes(strip.top_row()))?;
        let slot = 2 + parity;
        k.am_long(KernelId(idx as u16), HALO_HANDLER, &[tag << 2 | slot], base, slot * rb, rb, false)?;
        sent += 1;
    }
    if idx + 1 < cfg.kernels {
        k.partition().write(last, &f64s_to_bytes(strip.bottom_row()))?;
        let slot = parity;
        k.am_long(KernelId(idx as u16 + 2), HALO_HANDLER, &[tag << 2 | slot], last, slot * rb, rb, false)?;
        sent += 1;
    }
    k.wait_replies(sent)?;
    if let Some(f) = k.take_faults().first() {
        return Err(JacobiError::Protocol { from: f.from.0, what: format!("halo put rejected: {:?}", f.code) });
    }
    Ok(())
}

fn load_ghosts(strip: &mut StripState, k: &Kernel, ctx: &Ctx) -> Result<()> {
    let t = strip.iteration;
    let rb = row_bytes(&ctx.cfg);
    let tags = *ctx.tags.lock().unwrap();
    let fetch = |slot: usize| -> Result<Vec<f64>> {
        if tags[slot] != t {
            return Err(JacobiError::StaleHalo { slot, found: tags[slot], expected: t });
        }
        Ok(bytes_to_f64s(&k.partition().read(slot as u64 * rb, rb)?))
    };
    let parity = (t % 2) as usize;
    if ctx.upper().is_some() {
        let row = fetch(parity)?;
        strip.set_top_ghost(&row);
    }
    if ctx.lower().is_some() {
        let row = fetch(2 + parity)?;
        strip.set_bottom_ghost(&row);
    }
    Ok(())
}

/// Body of compute kernels `1..=K`. Parameters arrive from the control
/// kernel, so the same body serves every node.
pub fn compute_kernel(k: &mut Kernel) -> Result<KernelTiming> {
    let tags = Arc::new(Mutex::new([NO_TAG; GHOST_SLOTS]));
    let t2 = tags.clone();
    k.register_handler(HALO_HANDLER, move |call| {
        if let Some(&a) = call.args.first() {
            t2.lock().unwrap()[(a & 3) as usize] = a >> 2;
        }
    })?;
    let (from, params) = k.recv_payload()?;
    let cfg = JacobiConfig::from_words(&bytes_to_words(&params))
        .ok_or_else(|| JacobiError::Protocol { from: from.0, what: "bad parameter block".into() })?;
    let idx = k.id().0 as usize - 1;
    let ctx = Ctx { cfg: cfg.clone(), idx, tags };
    let mut strip = StripState::new(&cfg, idx);
    k.barrier()?;

    let start = Instant::now();
    let mut sync = Duration::ZERO;
    let mut compute = Duration::ZERO;
    halo_exchange(&strip, k, &cfg)?;
    k.barrier()?;
    sync += start.elapsed();
    for _ in 0..cfg.iterations {
        load_ghosts(&mut strip, k, &ctx)?;
        let t = Instant::now();
        strip = jacobi_step(&strip);
        compute += t.elapsed();
        let t = Instant::now();
        halo_exchange(&strip, k, &cfg)?;
        k.barrier()?;
        sync += t.elapsed();
    }
    let total = start.elapsed();

    k.partition().write(owned_offset(&cfg), &f64s_to_bytes(strip.owned()))?;
    let timing = KernelTiming {
        kernel: k.id().0,
        compute_ns: compute.as_nanos() as u64,
        sync_ns: sync.as_nanos() as u64,
        total_ns: total.as_nanos() as u64,
    };
    let words = [timing.compute_ns, timing.sync_ns, timing.total_ns];
    k.am_medium_fifo(CONTROL, NOOP_HANDLER, &[], &words_to_bytes(&words), false)?;
    k.wait_replies(1)?;
    k.barrier()?;
    debug!("kernel {} done: {timing:?}", k.id());
    Ok(timing)
}

/// Body of kernel 0: broadcasts the parameters, keeps pace with the
/// compute kernels' barriers, then collects timings and the final grid.
pub fn control_kernel(k: &mut Kernel, cfg: &JacobiConfig) -> Result<JacobiReport> {
    cfg.validate()?;
    check_halo_fits(cfg)?;
    let start = Instant::now();
    let params = words_to_bytes(&cfg.to_words());
    for c in 1..=cfg.kernels as u16 {
        k.am_medium_fifo(KernelId(c), NOOP_HANDLER, &[], &params, false)?;
    }
    k.wait_replies(cfg.kernels as u64)?;
    k.barrier()?;
    k.barrier()?;
    for _ in 0..cfg.iterations {
        k.barrier()?;
    }

    let mut timings = Vec::with_capacity(cfg.kernels);
    while timings.len() < cfg.kernels {
        let (from, bytes) = k.recv_payload()?;
        let w = bytes_to_words(&bytes);
        let [compute_ns, sync_ns, total_ns] = w[..] else {
            return Err(JacobiError::Protocol { from: from.0, what: format!("timing block of {} bytes", bytes.len()) });
        };
        timings.push(KernelTiming { kernel: from.0, compute_ns, sync_ns, total_ns });
    }
    timings.sort_by_key(|t| t.kernel);

    let grid = gather(k, cfg)?;
    k.barrier()?;
    let checksum = grid.iter().sum();
    Ok(JacobiReport {
        config: cfg.clone(),
        grid,
        checksum,
        timings,
        elapsed_ns: start.elapsed().as_nanos() as u64,
        network_bytes: None,
    })
}

/// Pulls every strip's owned rows with pipelined `get_long`s.
fn gather(k: &mut Kernel, cfg: &JacobiConfig) -> Result<Vec<f64>> {
    let window = (k.partition().size() as usize).min(CONTROL_SCRATCH) / GATHER_CHUNK;
    let strip_bytes = cfg.rows_per_kernel() * cfg.n * 8;
    let mut bytes = Vec::with_capacity(cfg.n * cfg.n * 8);
    for c in 1..=cfg.kernels as u16 {
        let chunks: Vec<(usize, usize)> =
            (0..strip_bytes).step_by(GATHER_CHUNK).map(|off| (off, GATHER_CHUNK.min(strip_bytes - off))).collect();
        for batch in chunks.chunks(window.max(1)) {
            for (slot, &(off, len)) in batch.iter().enumerate() {
                let remote = owned_offset(cfg) + off as u64;
                k.get_long(KernelId(c), remote, len as u64, (slot * GATHER_CHUNK) as u64)?;
            }
            k.wait_replies(batch.len() as u64)?;
            if let Some(f) = k.take_faults().first() {
                return Err(JacobiError::Protocol { from: f.from.0, what: format!("gather rejected: {:?}", f.code) });
            }
            for (slot, &(_, len)) in batch.iter().enumerate() {
                bytes.extend(k.partition().read((slot * GATHER_CHUNK) as u64, len as u64)?);
            }
        }
    }
    Ok(bytes_to_f64s(&bytes))
}

/// Runs the solver on an already started cluster with K+1 kernels.
pub fn run_jacobi(cfg: &JacobiConfig, cluster: &LocalCluster) -> Result<JacobiReport> {
    check_map(cfg, cluster.nodes()[0].map())?;
    let before = cluster.network_bytes();
    let mut compute = Vec::new();
    for c in 1..=cfg.kernels as u16 {
        let id = KernelId(c);
        compute.push(cluster.node_of(id).spawn(id, compute_kernel)?);
    }
    let cfg2 = cfg.clone();
    let control = cluster.node_of(CONTROL).spawn(CONTROL, move |k| control_kernel(k, &cfg2))?;
    let report = control.join();
    for h in compute {
        h.join()?;
    }
    let mut report = report?;
    report.network_bytes = Some(cluster.network_bytes() - before);
    Ok(report)
}

/// Starts a throwaway in-process cluster and runs the solver on it.
/// Kernel `i` lives on node `i % nodes`.
pub fn run_local(cfg: &JacobiConfig, nodes: usize, transport: TransportKind) -> Result<JacobiReport> {
    cfg.validate()?;
    check_halo_fits(cfg)?;
    let placement: Vec<u32> = (0..=cfg.kernels).map(|i| (i % nodes.max(1)) as u32).collect();
    let nodes = placement.iter().max().map_or(1, |&m| m as usize + 1);
    let mut map = ClusterMap::loopback(&placement, &vec![(0, 0); nodes], transport);
    let (control, compute) = partition_bytes(cfg);
    for k in &mut map.kernels {
        k.partition_bytes = if k.id == 0 { control } else { compute };
    }
    let opts = NodeOptions { default_timeout: Some(Duration::from_secs(300)), ..NodeOptions::default() };
    let cluster = LocalCluster::start_with_map(map, opts)?;
    let report = run_jacobi(cfg, &cluster);
    cluster.shutdown();
    report
}
