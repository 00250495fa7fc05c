use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use shoal::cluster::DEFAULT_UDP_MAX_BYTES;
use shoal::{
    AmClass, AmHeader, ClusterMap, DestLayout, Error, HandlerId, Kernel, KernelId, LocalCluster, NodeOptions,
    StridedSpec, TransportKind, VectoredSpec, NOOP_HANDLER,
};

use crate::{AmType, BenchConfig, BenchRecord, BenchTransport, Mode, Outcome, Result};

pub const SENDER: KernelId = KernelId(0);
pub const RECEIVER: KernelId = KernelId(1);
/// Receiver handler that ends the run.
pub const STOP_HANDLER: HandlerId = 0xFF00;

const UDP_SKIP: &str = "UDP_FRAGMENT_LIMIT";

fn strided_spec(s: usize) -> StridedSpec {
    if s == 0 {
        return StridedSpec::new(0, 0, 1);
    }
    let block = 1u32 << s.trailing_zeros().min(6);
    StridedSpec::new(block, 2 * block, (s / block as usize) as u32)
}

fn vectored_spec(s: usize) -> VectoredSpec {
    let n = (s / 8).clamp(1, 16);
    let chunk = s / n;
    VectoredSpec::new((0..n).map(|i| {
        let len = if i == n - 1 { s - chunk * (n - 1) } else { chunk };
        ((i * 2 * chunk.max(1)) as u64, len as u32)
    }))
}

/// Encoded size of the largest packet one iteration of a cell puts on the
/// wire (the response, for gets).
pub fn cell_packet_bytes(am: AmType, payload: usize) -> usize {
    let class = match am {
        AmType::Short => AmClass::Short,
        AmType::Medium | AmType::MediumFifo | AmType::GetMedium => AmClass::Medium,
        _ => AmClass::Long,
    };
    let mut h = AmHeader::new(class, SENDER, RECEIVER, NOOP_HANDLER);
    h.payload_len = if am == AmType::Short { 0 } else { payload as u32 };
    match am {
        AmType::LongStrided => h.layout = Some(DestLayout::Strided(strided_spec(payload))),
        AmType::LongVectored => h.layout = Some(DestLayout::Vectored(vectored_spec(payload))),
        _ => {}
    }
    h.encoded_len()
}

struct Cell<'a> {
    am: AmType,
    size: usize,
    buf: &'a [u8],
}

impl Cell<'_> {
    fn send(&self, k: &mut Kernel) -> shoal::Result<()> {
        let (s, b) = (self.size as u64, &self.buf[..self.size]);
        match self.am {
            AmType::Short => k.am_short(RECEIVER, NOOP_HANDLER, &[], false),
            AmType::Medium => k.am_medium(RECEIVER, NOOP_HANDLER, &[], 0, s, false),
            AmType::MediumFifo => k.am_medium_fifo(RECEIVER, NOOP_HANDLER, &[], b, false),
            AmType::Long => k.am_long(RECEIVER, NOOP_HANDLER, &[], 0, 0, s, false),
            AmType::LongFifo => k.am_long_fifo(RECEIVER, NOOP_HANDLER, &[], b, 0, false),
            AmType::LongStrided => k.am_long_strided(RECEIVER, NOOP_HANDLER, &[], 0, strided_spec(self.size), 0, false),
            AmType::LongVectored => {
                k.am_long_vectored(RECEIVER, NOOP_HANDLER, &[], 0, &vectored_spec(self.size), false)
            }
            AmType::GetMedium => k.get_medium(RECEIVER, 0, s, 0, &[]).map(drop),
            AmType::GetLong => k.get_long(RECEIVER, 0, s, 0).map(drop),
        }
    }

    fn round_trip(&self, k: &mut Kernel, cfg: &BenchConfig) -> shoal::Result<()> {
        self.send(k)?;
        k.wait_replies_timeout(1, Some(cfg.timeout))?;
        drain(k);
        Ok(())
    }

    fn latency(&self, k: &mut Kernel, cfg: &BenchConfig) -> shoal::Result<Outcome> {
        for _ in 0..cfg.warmup {
            self.round_trip(k, cfg)?;
        }
        let mut samples_ns = Vec::with_capacity(cfg.iterations);
        for _ in 0..cfg.iterations {
            let t0 = Instant::now();
            self.send(k)?;
            k.wait_replies_timeout(1, Some(cfg.timeout))?;
            samples_ns.push(t0.elapsed().as_nanos() as u64);
            drain(k);
        }
        Ok(Outcome::Latency { samples_ns })
    }

    fn throughput(&self, k: &mut Kernel, cfg: &BenchConfig) -> shoal::Result<Outcome> {
        for _ in 0..cfg.warmup {
            self.round_trip(k, cfg)?;
        }
        let before = k.reply_count();
        let n = cfg.iterations as u64;
        let t0 = Instant::now();
        for _ in 0..n {
            self.send(k)?;
        }
        k.wait_replies_timeout(n, Some(cfg.timeout))?;
        let elapsed_ns = t0.elapsed().as_nanos() as u64;
        drain(k);
        let after = k.reply_count();
        if after != before + n {
            return Ok(Outcome::Failed(format!("reply count moved by {} for {n} sends", after - before)));
        }
        Ok(Outcome::Throughput { elapsed_ns })
    }
}

fn drain(k: &mut Kernel) {
    while k.try_recv_payload().is_some() {}
}

fn pattern(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 31 + 7) as u8).collect()
}

const SOURCE_BYTES: usize = 2 * 8192;

/// Sender body: runs every cell of `cfg` in order, then stops the Receiver.
pub fn sender(k: &mut Kernel, cfg: &BenchConfig, transport: BenchTransport) -> shoal::Result<Vec<BenchRecord>> {
    let buf = pattern(SOURCE_BYTES);
    k.partition().write(0, &buf)?;
    k.barrier()?;
    let cap = cfg.udp_max_bytes.unwrap_or(DEFAULT_UDP_MAX_BYTES);
    let mut records = Vec::new();
    for &am in &cfg.am_types {
        for size in am.cell_sizes(&cfg.sizes) {
            let outcome = if transport == BenchTransport::Udp && cell_packet_bytes(am, size) > cap {
                Outcome::Skipped(UDP_SKIP.into())
            } else if size > buf.len() / 2 {
                Outcome::Failed(format!("payload {size} exceeds the benchmark buffer"))
            } else {
                let cell = Cell { am, size, buf: &buf };
                let r = match cfg.mode {
                    Mode::Latency => cell.latency(k, cfg),
                    Mode::Throughput => cell.throughput(k, cfg),
                };
                match r {
                    Ok(o) => o,
                    Err(Error::UdpFragmentLimit { .. }) => Outcome::Skipped(UDP_SKIP.into()),
                    Err(e) => {
                        k.resync_replies();
                        drain(k);
                        Outcome::Failed(e.to_string())
                    }
                }
            };
            debug!("{transport} {am} {size}: {outcome:?}");
            records.push(BenchRecord {
                topology: transport.topology(),
                transport,
                am_type: am,
                payload_bytes: size,
                iterations: cfg.iterations,
                outcome,
            });
        }
    }
    k.am_short(RECEIVER, STOP_HANDLER, &[], true)?;
    Ok(records)
}

/// Receiver body: discards Medium payloads until the Sender says stop.
/// Returns how many payloads it drained.
pub fn receiver(k: &mut Kernel) -> shoal::Result<u64> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    k.register_handler(STOP_HANDLER, move |_| s.store(true, Ordering::Release))?;
    k.partition().write(0, &pattern(SOURCE_BYTES))?;
    k.barrier()?;
    let mut drained = 0;
    loop {
        match k.recv_payload_timeout(Some(std::time::Duration::from_millis(20))) {
            Ok(_) => drained += 1,
            Err(Error::Timeout(_)) if stop.load(Ordering::Acquire) => return Ok(drained),
            Err(Error::Timeout(_)) => {}
            Err(e) => return Err(e),
        }
    }
}

/// Runs Sender and Receiver inside this process: on one node for
/// `loopback`, on two nodes talking over the network otherwise.
pub fn run_in_process(cfg: &BenchConfig, transport: BenchTransport) -> Result<Vec<BenchRecord>> {
    let (placement, nodes): (&[u32], usize) = match transport {
        BenchTransport::Loopback => (&[0, 0], 1),
        _ => (&[0, 1], 2),
    };
    let mut map = ClusterMap::loopback(placement, &vec![(0, 0); nodes], transport.kind().unwrap_or(TransportKind::Tcp));
    if let Some(cap) = cfg.udp_max_bytes {
        map.udp_max_bytes = cap;
    }
    info!("{transport}: {} cells", cfg.am_types.iter().map(|a| a.cell_sizes(&cfg.sizes).len()).sum::<usize>());
    let cluster =
        LocalCluster::start_with_map(map, NodeOptions { default_timeout: Some(cfg.timeout), ..Default::default() })?;
    let rx = cluster.node_of(RECEIVER).spawn(RECEIVER, receiver)?;
    let cfg2 = cfg.clone();
    let tx = cluster.node_of(SENDER).spawn(SENDER, move |k| sender(k, &cfg2, transport))?;
    let records = tx.join()?;
    rx.join()?;
    cluster.shutdown();
    Ok(records)
}

/// Every configured transport in turn.
pub fn sweep(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let mut all = Vec::new();
    for &t in &cfg.transports {
        all.extend(run_in_process(cfg, t)?);
    }
    Ok(all)
}

pub fn bench_latency(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    sweep(&BenchConfig { mode: Mode::Latency, ..cfg.clone() })
}

pub fn bench_throughput(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    sweep(&BenchConfig { mode: Mode::Throughput, ..cfg.clone() })
}
