use std::net::TcpListener;
use std::time::Duration;

use shoal::{load_cluster_map, Error, KernelId, Node, NodeOptions, TransportKind, NOOP_HANDLER};

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn two_nodes_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cluster.toml");
    let text = format!(
        r#"
transport = "tcp"

[[nodes]]
node_id = 0
host = "127.0.0.1"
tcp_port = {}
udp_port = 0

[[nodes]]
node_id = 1
host = "localhost"
tcp_port = {}
udp_port = 0

[[kernels]]
id = 0
node_id = 0
partition_bytes = 4096

[[kernels]]
id = 1
node_id = 1
partition_bytes = 4096
"#,
        free_port(),
        free_port()
    );
    std::fs::write(&path, text).unwrap();
    let map = load_cluster_map(&path).unwrap();
    assert_eq!(map.transport, TransportKind::Tcp);

    let opts = NodeOptions { default_timeout: Some(Duration::from_secs(20)), ..NodeOptions::default() };
    let n0 = Node::init_with(map.clone(), 0, opts.clone()).unwrap();
    let n1 = Node::init_with(map, 1, opts).unwrap();
    n0.wait_connected(Duration::from_secs(10)).unwrap();
    n1.wait_connected(Duration::from_secs(10)).unwrap();
    assert_eq!(n1.partition(KernelId(1)).unwrap().size(), 4096);

    let h1 = n1.spawn(KernelId(1), |k| {
        let got = k.recv_payload().unwrap();
        k.barrier().unwrap();
        got
    });
    let h0 = n0.spawn(KernelId(0), |k| {
        k.am_medium_fifo(KernelId(1), NOOP_HANDLER, &[], b"over tcp", false).unwrap();
        k.wait_replies(1).unwrap();
        let oob = k.get_long(KernelId(1), 0, 16, 4090);
        k.barrier().unwrap();
        oob
    });
    assert_eq!(h1.unwrap().join(), (KernelId(0), b"over tcp".to_vec()));
    assert!(matches!(h0.unwrap().join(), Err(Error::Memory(_))));
    assert!(n0.stats().network_bytes() > 0);
    n0.shutdown();
    n1.shutdown();
}

#[test]
fn bind_failure_is_reported() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let map = shoal::ClusterMap::loopback(&[0, 1], &[(port, 0), (0, 0)], TransportKind::Tcp);
    assert!(matches!(Node::init(map, 0), Err(Error::BindFailure { .. })));
}
