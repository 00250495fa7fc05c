use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use log::{error, info};
use shoal::{load_cluster_map, Node, NodeOptions};
use shoal_bench::{
    emit_results, meta_path, parse_sizes, receiver, sender, sweep, AmType, BenchConfig, BenchError, BenchRecord,
    BenchTransport, Mode, Result, RECEIVER, SENDER,
};

/// Active-message latency and throughput sweep.
///
/// Without --cluster both kernels run in this process. With --cluster, run
/// one instance per node of the map; the node hosting kernel 0 writes the
/// results.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Cluster map (TOML) listing kernel 0 (Sender) and kernel 1 (Receiver).
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// This process's node id in the cluster map.
    #[arg(long, default_value_t = 0)]
    node: u32,
    #[arg(long, default_value = "latency")]
    mode: Mode,
    /// loopback, tcp or udp; a comma list runs several in-process.
    #[arg(long, value_delimiter = ',', default_value = "loopback")]
    transport: Vec<BenchTransport>,
    /// `lo..hi` for powers of two, or a comma list.
    #[arg(long, default_value = "8..4096")]
    sizes: String,
    /// Comma list of AM types; defaults to all of them.
    #[arg(long = "am-types", value_delimiter = ',')]
    am_types: Vec<AmType>,
    #[arg(long, default_value_t = shoal_bench::DEFAULT_ITERATIONS)]
    iters: usize,
    #[arg(long, default_value_t = shoal_bench::DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Largest UDP datagram to send; bigger cells are SKIPPED.
    #[arg(long)]
    udp_max_bytes: Option<usize>,
    /// Per-wait deadline in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
}

fn clock_resolution_ns() -> u64 {
    (0..1000)
        .filter_map(|_| {
            let t = Instant::now();
            loop {
                let d = t.elapsed().as_nanos() as u64;
                if d > 0 {
                    break Some(d);
                }
            }
        })
        .min()
        .unwrap_or(0)
}

fn write_meta(out: &Path, cfg: &BenchConfig) -> Result<()> {
    let sizes: Vec<_> = cfg.sizes.iter().map(usize::to_string).collect();
    let transports: Vec<_> = cfg.transports.iter().map(|t| t.as_str()).collect();
    let text = format!(
        "clock=monotonic (std::time::Instant)\nclock_resolution_ns={}\nmode={}\ntransports={}\nsizes={}\niterations={}\nwarmup={}\nudp_max_bytes={}\n",
        clock_resolution_ns(),
        cfg.mode,
        transports.join(","),
        sizes.join(","),
        cfg.iterations,
        cfg.warmup,
        cfg.udp_max_bytes.unwrap_or(shoal::cluster::DEFAULT_UDP_MAX_BYTES),
    );
    fs::write(meta_path(out), text)?;
    Ok(())
}

fn run_distributed(args: &Args, mut cfg: BenchConfig, path: &Path) -> Result<Option<Vec<BenchRecord>>> {
    let mut map = load_cluster_map(path).map_err(shoal::Error::from)?;
    let [transport] = cfg.transports[..] else {
        return Err(BenchError::Config("--cluster takes a single --transport".into()));
    };
    let (sn, rn) = (map.node_of(SENDER), map.node_of(RECEIVER));
    let (Some(sn), Some(rn)) = (sn, rn) else {
        return Err(BenchError::Config("cluster map must contain kernels 0 and 1".into()));
    };
    match transport.kind() {
        None if sn != rn => return Err(BenchError::Config("loopback needs kernels 0 and 1 on one node".into())),
        None => {}
        Some(_) if sn == rn => {
            return Err(BenchError::Config(format!("{transport} needs kernels 0 and 1 on different nodes")))
        }
        Some(kind) => map.transport = kind,
    }
    if let Some(cap) = args.udp_max_bytes {
        map.udp_max_bytes = cap;
    }
    cfg.udp_max_bytes = Some(map.udp_max_bytes);
    let opts = NodeOptions { default_timeout: Some(cfg.timeout), ..NodeOptions::default() };
    let node = Node::init_with(map, args.node, opts)?;
    node.wait_connected(Duration::from_secs(60))?;
    let local = node.local_kernels();
    let rx = if local.contains(&RECEIVER) { Some(node.spawn(RECEIVER, receiver)?) } else { None };
    let tx =
        if local.contains(&SENDER) { Some(node.spawn(SENDER, move |k| sender(k, &cfg, transport))?) } else { None };
    let records = tx.map(|h| h.join()).transpose()?;
    if let Some(h) = rx {
        info!("receiver drained {} payloads", h.join()?);
    }
    node.shutdown();
    Ok(records)
}

fn run(args: Args) -> Result<bool> {
    let cfg = BenchConfig {
        mode: args.mode,
        transports: args.transport.clone(),
        am_types: if args.am_types.is_empty() { AmType::ALL.to_vec() } else { args.am_types.clone() },
        sizes: parse_sizes(&args.sizes)?,
        iterations: args.iters,
        warmup: args.warmup,
        udp_max_bytes: args.udp_max_bytes,
        timeout: Duration::from_millis(args.timeout_ms),
    };
    let records = match &args.cluster {
        Some(path) => match run_distributed(&args, cfg.clone(), path)? {
            Some(r) => r,
            None => return Ok(true),
        },
        None => sweep(&cfg)?,
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    emit_results(&records, &args.out)?;
    write_meta(&args.out, &cfg)?;
    let failed: Vec<_> = records.iter().filter(|r| r.is_failed()).collect();
    let skipped = records.iter().filter(|r| r.is_skipped()).count();
    println!("{} cells, {skipped} skipped, {} failed -> {}", records.len(), failed.len(), args.out.display());
    for r in &failed {
        error!("{} {} {} B: {:?}", r.transport, r.am_type, r.payload_bytes, r.outcome);
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
