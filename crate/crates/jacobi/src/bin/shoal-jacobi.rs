use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use log::{error, info};
use shoal::{load_cluster_map, KernelId, Node, NodeOptions, TransportKind};
use shoal_jacobi::{
    check_map, compute_kernel, control_kernel, jacobi_oracle, max_abs_diff, run_local, JacobiConfig, JacobiError,
    JacobiReport, Result,
};

const TOLERANCE: f64 = 1e-12;

/// Distributed Jacobi relaxation.
///
/// Without --cluster every kernel runs in this process (on --nodes
/// loopback nodes). With --cluster, run one instance per node of the map;
/// the node hosting kernel 0 reports the result.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Cluster map (TOML) with K+1 kernels: kernel 0 controls, 1..=K compute.
    #[arg(long)]
    cluster: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    node: u32,
    /// Grid edge length N.
    #[arg(long)]
    grid: usize,
    /// Compute kernels K; N must be divisible by K.
    #[arg(long)]
    kernels: usize,
    #[arg(long, default_value_t = shoal_jacobi::DEFAULT_ITERATIONS)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare against the sequential solver and fail on mismatch.
    #[arg(long)]
    verify: bool,
    /// Per-kernel timing CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// In-process nodes when no cluster map is given.
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    /// Transport between in-process nodes.
    #[arg(long, default_value = "tcp", value_parser = parse_transport)]
    transport: TransportKind,
}

fn parse_transport(s: &str) -> std::result::Result<TransportKind, String> {
    match s {
        "tcp" => Ok(TransportKind::Tcp),
        "udp" => Ok(TransportKind::Udp),
        _ => Err(format!("unknown transport {s:?}")),
    }
}

fn run_distributed(cfg: &JacobiConfig, path: &Path, node_id: u32) -> Result<Option<JacobiReport>> {
    let map = load_cluster_map(path).map_err(shoal::Error::from)?;
    check_map(cfg, &map)?;
    let opts = NodeOptions { default_timeout: Some(Duration::from_secs(600)), ..NodeOptions::default() };
    let node = Node::init_with(map, node_id, opts)?;
    node.wait_connected(Duration::from_secs(60))?;
    let mut control = None;
    let mut compute = Vec::new();
    for id in node.local_kernels() {
        if id == KernelId(0) {
            let c = cfg.clone();
            control = Some(node.spawn(id, move |k| control_kernel(k, &c))?);
        } else {
            compute.push(node.spawn(id, compute_kernel)?);
        }
    }
    let report = control.map(|h| h.join()).transpose();
    for h in compute {
        let t = h.join()?;
        info!("kernel {}: compute {} ns, sync {} ns, total {} ns", t.kernel, t.compute_ns, t.sync_ns, t.total_ns);
    }
    node.shutdown();
    report
}

fn write_timings(path: &Path, report: &JacobiReport) -> std::io::Result<()> {
    let mut text = String::from("kernel,compute_ns,sync_ns,total_ns\n");
    for t in &report.timings {
        text += &format!("{},{},{},{}\n", t.kernel, t.compute_ns, t.sync_ns, t.total_ns);
    }
    std::fs::write(path, text)
}

fn run(args: Args) -> Result<bool> {
    let cfg = JacobiConfig { seed: args.seed, ..JacobiConfig::new(args.grid, args.kernels, args.iters) };
    cfg.validate()?;
    let report = match &args.cluster {
        Some(path) => match run_distributed(&cfg, path, args.node)? {
            Some(r) => r,
            None => return Ok(true),
        },
        None => run_local(&cfg, args.nodes, args.transport)?,
    };
    println!("{cfg}: checksum {:.12e}, {} ms", report.checksum, report.elapsed_ns / 1_000_000);
    for t in &report.timings {
        println!(
            "  kernel {:>3}: compute {} ns, sync {} ns, total {} ns",
            t.kernel, t.compute_ns, t.sync_ns, t.total_ns
        );
    }
    if let Some(out) = &args.out {
        write_timings(out, &report).map_err(|e| JacobiError::Config(format!("{}: {e}", out.display())))?;
    }
    if args.verify {
        let diff = max_abs_diff(&report.grid, &jacobi_oracle(&cfg));
        println!("max deviation from sequential solver: {diff:e}");
        if diff > TOLERANCE {
            error!("verification failed: {diff:e} > {TOLERANCE:e}");
            return Ok(false);
        }
    }
    Ok(true)
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
