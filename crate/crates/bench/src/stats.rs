//! Summary statistics over latency samples.

/// Middle element, or the midpoint of the two middle elements.
pub fn median(samples: &[u64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_unstable();
    let mid = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[mid] as f64 } else { (s[mid - 1] as f64 + s[mid] as f64) / 2.0 })
}

pub fn mean(samples: &[u64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    Some(samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len() as f64)
}

/// Bytes per second for `iterations` messages of `payload` bytes.
pub fn throughput(iterations: usize, payload: usize, elapsed_ns: u64) -> f64 {
    iterations as f64 * payload as f64 * 1e9 / elapsed_ns.max(1) as f64
}
