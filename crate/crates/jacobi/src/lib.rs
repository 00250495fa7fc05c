//! Distributed Jacobi relaxation on the shoal runtime.
//!
//! Kernel 0 is the control kernel; kernels `1..=K` each own an equal strip
//! of rows of an `N x N` grid. Every iteration a compute kernel updates its
//! strip with the four-neighbour average, pushes its edge rows into the
//! neighbours' ghost rows with Long puts, and joins a barrier. At the end
//! the control kernel collects per-kernel timings and pulls the final grid
//! back with gets.

mod app;
mod grid;

use std::fmt;

pub use app::{
    check_halo_fits, check_map, compute_kernel, control_kernel, halo_exchange, halo_packet_bytes, partition_bytes,
    run_jacobi, run_local, JacobiReport, KernelTiming, HALO_HANDLER,
};
pub use grid::{initial_grid, initial_value, jacobi_oracle, jacobi_step, max_abs_diff, StripState};

pub const DEFAULT_ITERATIONS: u64 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum JacobiError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "HALO_TOO_LARGE: a {n}-element row needs a {packet}-byte message, above the {limit}-byte single-message limit"
    )]
    HaloTooLarge { n: usize, packet: usize, limit: usize },
    #[error("ghost row {slot} holds iteration {found}, expected {expected}")]
    StaleHalo { slot: usize, found: u64, expected: u64 },
    #[error("malformed message from kernel {from}: {what}")]
    Protocol { from: u16, what: String },
    #[error(transparent)]
    Runtime(#[from] shoal::Error),
}

impl From<shoal::MemoryError> for JacobiError {
    fn from(e: shoal::MemoryError) -> Self {
        JacobiError::Runtime(e.into())
    }
}

pub type Result<T, E = JacobiError> = std::result::Result<T, E>;

/// Initial interior values; the boundary is always `boundary`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interior {
    /// Uniform in [0, 1), reproducible per cell from the seed.
    Random,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiConfig {
    /// Grid edge length, boundary included.
    pub n: usize,
    pub iterations: u64,
    /// Number of compute kernels.
    pub kernels: usize,
    pub seed: u64,
    /// Fixed value of the outer ring of cells.
    pub boundary: f64,
    pub interior: Interior,
}

impl JacobiConfig {
    pub fn new(n: usize, kernels: usize, iterations: u64) -> Self {
        JacobiConfig { n, iterations, kernels, seed: 0, boundary: 1.0, interior: Interior::Random }
    }

    pub fn rows_per_kernel(&self) -> usize {
        self.n / self.kernels
    }

    /// Owned global rows `[r0, r1)` of compute kernel `idx` (0-based).
    pub fn strip_rows(&self, idx: usize) -> (usize, usize) {
        let r = self.rows_per_kernel();
        (idx * r, (idx + 1) * r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(JacobiError::Config(m));
        if self.n < 2 {
            return bad(format!("grid size {} must be at least 2", self.n));
        }
        if self.kernels == 0 || self.kernels > u16::MAX as usize - 1 {
            return bad(format!("kernel count {} out of range", self.kernels));
        }
        if !self.n.is_multiple_of(self.kernels) {
            return bad(format!("grid size {} is not divisible by {} kernels", self.n, self.kernels));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        Ok(())
    }

    pub(crate) fn to_words(&self) -> [u64; 7] {
        let (tag, v) = match self.interior {
            Interior::Random => (0, 0.0),
            Interior::Constant(v) => (1, v),
        };
        [self.n as u64, self.iterations, self.kernels as u64, self.seed, self.boundary.to_bits(), tag, v.to_bits()]
    }

    pub(crate) fn from_words(w: &[u64]) -> Option<Self> {
        let [n, iterations, kernels, seed, boundary, tag, v] = *w else { return None };
        let interior = match tag {
            0 => Interior::Random,
            1 => Interior::Constant(f64::from_bits(v)),
            _ => return None,
        };
        Some(JacobiConfig {
            n: n as usize,
            iterations,
            kernels: kernels as usize,
            seed,
            boundary: f64::from_bits(boundary),
            interior,
        })
    }
}

impl fmt::Display for JacobiConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} K={} iterations={} seed={}", self.n, self.kernels, self.iterations, self.seed)
    }
}

pub(crate) fn words_to_bytes(w: &[u64]) -> Vec<u8> {
    w.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn bytes_to_words(b: &[u8]) -> Vec<u64> {
    b.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
}
