//! Latency and throughput microbenchmarks.
//!
//! A Sender kernel (id 0) drives one active-message type at a time against a
//! Receiver kernel (id 1) and records either per-iteration round-trip
//! latency or the elapsed time of a back-to-back burst. Every
//! (topology, transport, AM type, payload) cell of the sweep yields exactly
//! one [`BenchRecord`]: measured data, SKIPPED with a reason, or an error.

mod output;
mod runner;
pub mod stats;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use shoal::TransportKind;

pub use output::{emit_results, meta_path, parse_results, samples_path, summary_rows, SummaryRow, CSV_HEADER};
pub use runner::{
    bench_latency, bench_throughput, cell_packet_bytes, receiver, run_in_process, sender, sweep, RECEIVER, SENDER,
    STOP_HANDLER,
};

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_WARMUP: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Runtime(#[from] shoal::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no records to write")]
    EmptyRecords,
    #[error("malformed results: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident = $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = BenchError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(BenchError::Parse(format!(concat!("unknown ", stringify!($name), " {:?}"), s))),
                }
            }
        }
    };
}

named_enum!(Topology { IntraNode = "intra_node", InterNode = "inter_node" });

named_enum!(
    /// How Sender and Receiver are connected.
    BenchTransport { Loopback = "loopback", Tcp = "tcp", Udp = "udp" }
);

named_enum!(AmType {
    Short = "short",
    Medium = "medium",
    MediumFifo = "medium_fifo",
    Long = "long",
    LongFifo = "long_fifo",
    LongStrided = "long_strided",
    LongVectored = "long_vectored",
    GetMedium = "get_medium",
    GetLong = "get_long",
});

named_enum!(Mode { Latency = "latency", Throughput = "throughput" });

impl BenchTransport {
    pub fn topology(self) -> Topology {
        match self {
            BenchTransport::Loopback => Topology::IntraNode,
            _ => Topology::InterNode,
        }
    }

    /// Wire transport between the two nodes; `None` for same-node runs.
    pub fn kind(self) -> Option<TransportKind> {
        match self {
            BenchTransport::Loopback => None,
            BenchTransport::Tcp => Some(TransportKind::Tcp),
            BenchTransport::Udp => Some(TransportKind::Udp),
        }
    }
}

impl AmType {
    /// The five put-style types of the standard sweep.
    pub const PUTS: &'static [AmType] =
        &[AmType::Short, AmType::Medium, AmType::MediumFifo, AmType::Long, AmType::LongFifo];

    /// Payload sizes this type is measured at: Short carries no payload,
    /// so it gets a single cell at 0 bytes.
    pub fn cell_sizes(self, sizes: &[usize]) -> Vec<usize> {
        match self {
            AmType::Short => vec![0],
            _ => sizes.to_vec(),
        }
    }
}

/// Powers of two from `lo` to `hi` inclusive.
pub fn power_of_two_sizes(lo: usize, hi: usize) -> Vec<usize> {
    std::iter::successors(Some(lo.max(1).next_power_of_two()), |s| s.checked_mul(2)).take_while(|&s| s <= hi).collect()
}

/// Parses `8..4096` (powers of two) or a comma list such as `8,64,1024`.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| BenchError::Parse(format!("size {t:?}: {e}")));
    let sizes = match s.split_once("..") {
        Some((lo, hi)) => power_of_two_sizes(num(lo)?, num(hi)?),
        None => s.split(',').map(num).collect::<Result<_>>()?,
    };
    if sizes.is_empty() {
        return Err(BenchError::Parse(format!("no sizes in {s:?}")));
    }
    Ok(sizes)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: Mode,
    pub transports: Vec<BenchTransport>,
    pub am_types: Vec<AmType>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub warmup: usize,
    /// Datagram cap for UDP; the runtime default applies when `None`.
    pub udp_max_bytes: Option<usize>,
    /// Per-wait deadline so a lost datagram fails a cell instead of the run.
    pub timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            mode: Mode::Latency,
            transports: vec![BenchTransport::Loopback],
            am_types: AmType::ALL.to_vec(),
            sizes: power_of_two_sizes(8, 4096),
            iterations: DEFAULT_ITERATIONS,
            warmup: DEFAULT_WARMUP,
            udp_max_bytes: None,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Round-trip time of each timed iteration.
    Latency {
        samples_ns: Vec<u64>,
    },
    /// Wall time from the first send to the last reply.
    Throughput {
        elapsed_ns: u64,
    },
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub topology: Topology,
    pub transport: BenchTransport,
    pub am_type: AmType,
    pub payload_bytes: usize,
    pub iterations: usize,
    pub outcome: Outcome,
}

impl BenchRecord {
    pub fn median_ns(&self) -> Option<f64> {
        match &self.outcome {
            Outcome::Latency { samples_ns } => stats::median(samples_ns),
            _ => None,
        }
    }

    pub fn mean_ns(&self) -> Option<f64> {
        match &self.outcome {
            Outcome::Latency { samples_ns } => stats::mean(samples_ns),
            _ => None,
        }
    }

    pub fn throughput_bytes_per_s(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Throughput { elapsed_ns } => {
                Some(stats::throughput(self.iterations, self.payload_bytes, elapsed_ns))
            }
            _ => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.outcome, Outcome::Failed(_))
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self.outcome, Outcome::Skipped(_))
    }
}
