use std::net::TcpListener;
use std::process::Command;

use shoal::TransportKind;
use shoal_jacobi::{jacobi_oracle, max_abs_diff, run_local, Interior, JacobiConfig, JacobiError};

#[test]
fn four_strips_on_one_node_match_the_sequential_solver() {
    let cfg = JacobiConfig { seed: 7, ..JacobiConfig::new(64, 4, 50) };
    let r = run_local(&cfg, 1, TransportKind::Tcp).unwrap();
    assert!(max_abs_diff(&r.grid, &jacobi_oracle(&cfg)) <= 1e-12);
    assert_eq!(r.timings.iter().map(|t| t.kernel).collect::<Vec<_>>(), [1, 2, 3, 4]);
}

#[test]
fn one_strip_is_bit_identical() {
    let cfg = JacobiConfig::new(32, 1, 40);
    let r = run_local(&cfg, 1, TransportKind::Tcp).unwrap();
    assert_eq!(r.grid, jacobi_oracle(&cfg));
    assert_eq!(r.checksum, r.grid.iter().sum::<f64>());
}

#[test]
fn two_nodes_agree_with_one_node() {
    for transport in [TransportKind::Tcp, TransportKind::Udp] {
        let cfg = JacobiConfig { seed: 3, ..JacobiConfig::new(64, 2, 30) };
        let one = run_local(&cfg, 1, transport).unwrap();
        let two = run_local(&cfg, 2, transport).unwrap();
        assert_eq!(one.grid, two.grid);
        assert!(two.network_bytes.unwrap() > 0);
    }
}

#[test]
fn oversized_halo_rows_are_rejected_up_front() {
    let e = run_local(&JacobiConfig::new(4096, 2, 1), 1, TransportKind::Tcp).unwrap_err();
    assert!(matches!(e, JacobiError::HaloTooLarge { n: 4096, .. }), "{e}");
    let cfg = JacobiConfig::new(1024, 2, 1);
    let r = run_local(&cfg, 1, TransportKind::Tcp).unwrap();
    assert!(max_abs_diff(&r.grid, &jacobi_oracle(&cfg)) <= 1e-12);
}

#[test]
fn single_node_runs_use_no_network() {
    let r = run_local(&JacobiConfig::new(64, 4, 10), 1, TransportKind::Tcp).unwrap();
    assert_eq!(r.network_bytes, Some(0));
}

#[test]
fn timings_are_consistent() {
    let r = run_local(&JacobiConfig::new(64, 2, 20), 1, TransportKind::Tcp).unwrap();
    for t in &r.timings {
        assert!(t.compute_ns + t.sync_ns <= t.total_ns, "{t:?}");
        assert!(t.compute_ns > 0);
    }
}

#[test]
fn constant_grid_stays_constant() {
    let cfg = JacobiConfig { boundary: 2.5, interior: Interior::Constant(2.5), ..JacobiConfig::new(48, 3, 15) };
    let r = run_local(&cfg, 2, TransportKind::Tcp).unwrap();
    assert!(r.grid.iter().all(|&v| v == 2.5));
}

#[test]
fn invalid_configurations_fail() {
    assert!(matches!(run_local(&JacobiConfig::new(64, 3, 1), 1, TransportKind::Tcp), Err(JacobiError::Config(_))));
    assert!(matches!(run_local(&JacobiConfig::new(64, 2, 0), 1, TransportKind::Tcp), Err(JacobiError::Config(_))));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn cli_verifies_in_process_and_across_processes() {
    let bin = env!("CARGO_BIN_EXE_shoal-jacobi");
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let st = Command::new(bin)
        .args(["--grid", "32", "--kernels", "2", "--iters", "10", "--verify", "--nodes", "2", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("kernel,compute_ns,sync_ns,total_ns"));
    assert_eq!(text.lines().count(), 3);

    let map = dir.path().join("cluster.toml");
    let mut toml = String::from("transport = \"tcp\"\n");
    for node in 0..2 {
        toml +=
            &format!("[[nodes]]\nnode_id = {node}\nhost = \"127.0.0.1\"\ntcp_port = {}\nudp_port = 0\n", free_port());
    }
    for (id, node) in [(0, 0), (1, 0), (2, 1)] {
        toml += &format!("[[kernels]]\nid = {id}\nnode_id = {node}\n");
    }
    std::fs::write(&map, toml).unwrap();
    let args = ["--grid", "32", "--kernels", "2", "--iters", "10", "--verify", "--cluster", map.to_str().unwrap()];
    let mut worker = Command::new(bin).args(args).args(["--node", "1"]).spawn().unwrap();
    let lead = Command::new(bin).args(args).args(["--node", "0"]).output().unwrap();
    assert!(worker.wait().unwrap().success());
    assert!(lead.status.success(), "{}", String::from_utf8_lossy(&lead.stderr));
    assert!(String::from_utf8_lossy(&lead.stdout).contains("checksum"));

    let st = Command::new(bin).args(["--grid", "4096", "--kernels", "2", "--iters", "1"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("HALO_TOO_LARGE"));
}
