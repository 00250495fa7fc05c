use std::collections::{HashMap, HashSet};
use std::net::TcpListener;
use std::process::Command;
use std::time::Duration;

use shoal_bench::{
    bench_latency, bench_throughput, emit_results, parse_results, samples_path, AmType, BenchConfig, BenchTransport,
    Outcome,
};

fn cfg(transports: &[BenchTransport], am_types: &[AmType], sizes: &[usize], iterations: usize) -> BenchConfig {
    BenchConfig {
        transports: transports.to_vec(),
        am_types: am_types.to_vec(),
        sizes: sizes.to_vec(),
        iterations,
        warmup: 5,
        timeout: Duration::from_secs(10),
        ..BenchConfig::default()
    }
}

#[test]
fn short_loopback_latency_has_all_samples() {
    let records = bench_latency(&cfg(&[BenchTransport::Loopback], &[AmType::Short], &[8], 200)).unwrap();
    assert_eq!(records.len(), 1);
    let Outcome::Latency { samples_ns } = &records[0].outcome else { panic!("{:?}", records[0]) };
    assert_eq!(samples_ns.len(), 200);
    let m = records[0].median_ns().unwrap();
    assert!(m.is_finite() && m > 0.0);
    assert_eq!(records[0].payload_bytes, 0);
}

#[test]
fn udp_cells_over_the_cap_are_skipped() {
    let mut c = cfg(&[BenchTransport::Udp], &[AmType::MediumFifo, AmType::GetLong], &[1024, 2048], 20);
    c.udp_max_bytes = Some(1500);
    let records = bench_latency(&c).unwrap();
    let by_size: HashMap<_, _> = records.iter().map(|r| ((r.am_type, r.payload_bytes), &r.outcome)).collect();
    for am in [AmType::MediumFifo, AmType::GetLong] {
        assert!(matches!(by_size[&(am, 1024)], Outcome::Latency { .. }));
        assert_eq!(by_size[&(am, 2048)], &Outcome::Skipped("UDP_FRAGMENT_LIMIT".into()));
    }
}

fn independent_median(mut v: Vec<u64>) -> f64 {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

#[test]
fn medians_match_a_recomputation_from_raw_samples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lat.csv");
    let records =
        bench_latency(&cfg(&[BenchTransport::Loopback], &[AmType::Long, AmType::GetMedium], &[8, 512], 51)).unwrap();
    emit_results(&records, &path).unwrap();

    let mut raw: HashMap<(String, String), Vec<u64>> = HashMap::new();
    for line in std::fs::read_to_string(samples_path(&path)).unwrap().lines().skip(1) {
        let f: Vec<_> = line.split(',').collect();
        raw.entry((f[2].into(), f[3].into())).or_default().push(f[5].parse().unwrap());
    }
    let mut checked = 0;
    for line in std::fs::read_to_string(&path).unwrap().lines().skip(1) {
        let f: Vec<_> = line.split(',').collect();
        if f[5] == "latency_median_ns" {
            let samples = raw[&(f[2].to_string(), f[3].to_string())].clone();
            assert_eq!(samples.len(), 51);
            let reported: f64 = f[6].parse().unwrap();
            assert_eq!(reported, independent_median(samples.clone()));
            assert!(samples.iter().any(|&s| s as f64 == reported));
            checked += 1;
        }
    }
    assert_eq!(checked, 4);
    assert_eq!(parse_results(&path).unwrap(), records);
}

#[test]
fn throughput_is_bytes_over_elapsed_and_grows_with_payload() {
    let one = bench_throughput(&cfg(&[BenchTransport::Loopback], &[AmType::MediumFifo], &[64], 1)).unwrap();
    let Outcome::Throughput { elapsed_ns } = one[0].outcome else { panic!("{:?}", one[0]) };
    let expect = 64.0 / (elapsed_ns as f64 / 1e9);
    assert!((one[0].throughput_bytes_per_s().unwrap() - expect).abs() <= expect * 1e-12);

    let recs = bench_throughput(&cfg(&[BenchTransport::Loopback], &[AmType::MediumFifo], &[8, 4096], 500)).unwrap();
    assert!(recs.iter().all(|r| !r.is_failed()), "{recs:?}");
    let small = recs[0].throughput_bytes_per_s().unwrap();
    let large = recs[1].throughput_bytes_per_s().unwrap();
    assert!(large >= small, "8 B: {small}, 4096 B: {large}");
}

#[test]
fn every_cell_appears_once_for_all_types_and_transports() {
    let transports = [BenchTransport::Loopback, BenchTransport::Tcp, BenchTransport::Udp];
    let mut c = cfg(&transports, AmType::ALL, &[8, 2048], 10);
    c.udp_max_bytes = Some(1500);
    let records = bench_latency(&c).unwrap();
    let keys: HashSet<_> = records.iter().map(|r| (r.transport, r.am_type, r.payload_bytes)).collect();
    assert_eq!(keys.len(), records.len());
    assert_eq!(records.len(), 3 * (1 + 8 * 2));
    assert!(records.iter().all(|r| !r.is_failed()), "{records:?}");
    assert_eq!(records.iter().filter(|r| r.is_skipped()).count(), 8);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn cli_runs_across_two_processes() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("cluster.toml");
    std::fs::write(
        &map,
        format!(
            "transport = \"tcp\"\n\
             [[nodes]]\nnode_id = 0\nhost = \"127.0.0.1\"\ntcp_port = {}\nudp_port = 0\n\
             [[nodes]]\nnode_id = 1\nhost = \"127.0.0.1\"\ntcp_port = {}\nudp_port = 0\n\
             [[kernels]]\nid = 0\nnode_id = 0\n\
             [[kernels]]\nid = 1\nnode_id = 1\n",
            free_port(),
            free_port()
        ),
    )
    .unwrap();
    let out = dir.path().join("res.csv");
    let bin = env!("CARGO_BIN_EXE_shoal-bench");
    let common =
        ["--transport", "tcp", "--sizes", "8..64", "--iters", "20", "--warmup", "2", "--am-types", "short,long"];
    let mut receiver = Command::new(bin)
        .args(["--cluster", map.to_str().unwrap(), "--node", "1"])
        .args(common)
        .arg("--out")
        .arg(dir.path().join("unused.csv"))
        .spawn()
        .unwrap();
    let sender = Command::new(bin)
        .args(["--cluster", map.to_str().unwrap(), "--node", "0"])
        .args(common)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(sender.success());
    assert!(receiver.wait().unwrap().success());
    let records = parse_results(&out).unwrap();
    assert_eq!(records.len(), 1 + 4);
    assert!(records.iter().all(|r| matches!(r.outcome, Outcome::Latency { .. })));
    assert!(!dir.path().join("unused.csv").exists());
}

#[test]
fn cli_rejects_bad_arguments() {
    let bin = env!("CARGO_BIN_EXE_shoal-bench");
    let st = Command::new(bin).args(["--transport", "pigeon"]).output().unwrap();
    assert!(!st.status.success());
    let st = Command::new(bin).args(["--sizes", "64..8"]).output().unwrap();
    assert!(!st.status.success());
}
