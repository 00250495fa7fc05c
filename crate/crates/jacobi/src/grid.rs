//! Grid initialisation, the strip update and the sequential reference.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Interior, JacobiConfig};

struct CellRng(ChaCha8Rng);

impl CellRng {
    fn new(seed: u64) -> Self {
        CellRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform [0, 1) value for cell `idx`, independent of visiting order.
    fn at(&mut self, idx: usize) -> f64 {
        self.0.set_word_pos(idx as u128 * 2);
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn value(cfg: &JacobiConfig, rng: &mut CellRng, i: usize, j: usize) -> f64 {
    let n = cfg.n;
    if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
        return cfg.boundary;
    }
    match cfg.interior {
        Interior::Random => rng.at(i * n + j),
        Interior::Constant(v) => v,
    }
}

pub fn initial_value(cfg: &JacobiConfig, i: usize, j: usize) -> f64 {
    value(cfg, &mut CellRng::new(cfg.seed), i, j)
}

/// Row-major `n x n` starting grid.
pub fn initial_grid(cfg: &JacobiConfig) -> Vec<f64> {
    let mut rng = CellRng::new(cfg.seed);
    (0..cfg.n * cfg.n).map(|c| value(cfg, &mut rng, c / cfg.n, c % cfg.n)).collect()
}

/// Sequential double-buffered Jacobi; the ground truth for the
/// distributed solver. `iterations = 0` returns the initial grid.
pub fn jacobi_oracle(cfg: &JacobiConfig) -> Vec<f64> {
    let n = cfg.n;
    let mut cur = initial_grid(cfg);
    let mut next = cur.clone();
    for _ in 0..cfg.iterations {
        for i in 1..n.saturating_sub(1) {
            for j in 1..n - 1 {
                let up = cur[(i - 1) * n + j];
                let down = cur[(i + 1) * n + j];
                let left = cur[i * n + j - 1];
                let right = cur[i * n + j + 1];
                next[i * n + j] = (up + down + left + right) / 4.0;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One compute kernel's rows plus a ghost row above and below.
#[derive(Debug, Clone, PartialEq)]
pub struct StripState {
    pub n: usize,
    /// Owned global rows `[r0, r1)`.
    pub r0: usize,
    pub r1: usize,
    /// `(r1 - r0 + 2) x n`, row 0 and the last row are ghosts.
    pub cells: Vec<f64>,
    pub iteration: u64,
}

impl StripState {
    /// Strip of compute kernel `idx` at iteration 0, ghosts included.
    pub fn new(cfg: &JacobiConfig, idx: usize) -> Self {
        let (r0, r1) = cfg.strip_rows(idx);
        let n = cfg.n;
        let mut rng = CellRng::new(cfg.seed);
        let mut cells = vec![0.0; (r1 - r0 + 2) * n];
        for (local, g) in (r0 as isize - 1..r1 as isize + 1).enumerate() {
            if g < 0 || g >= n as isize {
                continue;
            }
            for j in 0..n {
                cells[local * n + j] = value(cfg, &mut rng, g as usize, j);
            }
        }
        StripState { n, r0, r1, cells, iteration: 0 }
    }

    pub fn rows(&self) -> usize {
        self.r1 - self.r0
    }

    fn row(&self, local: usize) -> &[f64] {
        &self.cells[local * self.n..(local + 1) * self.n]
    }

    fn row_mut(&mut self, local: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.cells[local * n..(local + 1) * n]
    }

    /// First owned row.
    pub fn top_row(&self) -> &[f64] {
        self.row(1)
    }

    /// Last owned row.
    pub fn bottom_row(&self) -> &[f64] {
        self.row(self.rows())
    }

    pub fn owned(&self) -> &[f64] {
        &self.cells[self.n..(self.rows() + 1) * self.n]
    }

    pub fn set_top_ghost(&mut self, row: &[f64]) {
        self.row_mut(0).copy_from_slice(row);
    }

    pub fn set_bottom_ghost(&mut self, row: &[f64]) {
        let last = self.rows() + 1;
        self.row_mut(last).copy_from_slice(row);
    }
}

/// Advances a strip by one iteration. Rows on the grid edge and the first
/// and last column keep their values.
pub fn jacobi_step(strip: &StripState) -> StripState {
    let n = strip.n;
    let cur = &strip.cells;
    let mut next = strip.clone();
    for r in 1..=strip.rows() {
        let g = strip.r0 + r - 1;
        if g == 0 || g == n - 1 {
            continue;
        }
        for j in 1..n - 1 {
            let up = cur[(r - 1) * n + j];
            let down = cur[(r + 1) * n + j];
            let left = cur[r * n + j - 1];
            let right = cur[r * n + j + 1];
            next.cells[r * n + j] = (up + down + left + right) / 4.0;
        }
    }
    next.iteration += 1;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: usize, c: f64, iterations: u64) -> JacobiConfig {
        JacobiConfig { boundary: c, interior: Interior::Constant(c), ..JacobiConfig::new(n, 1, iterations) }
    }

    #[test]
    fn constant_grid_is_a_fixed_point() {
        let cfg = constant(16, 3.5, 25);
        assert!(jacobi_oracle(&cfg).iter().all(|&v| v == 3.5));
        let mut s = StripState::new(&cfg, 0);
        for _ in 0..25 {
            s = jacobi_step(&s);
        }
        assert!(s.owned().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn four_by_four_by_hand() {
        let cfg = JacobiConfig { interior: Interior::Constant(0.0), ..JacobiConfig::new(4, 1, 1) };
        let g = jacobi_oracle(&cfg);
        #[rustfmt::skip]
        let expect = [
            1.0, 1.0, 1.0, 1.0,
            1.0, 0.5, 0.5, 1.0,
            1.0, 0.5, 0.5, 1.0,
            1.0, 1.0, 1.0, 1.0,
        ];
        assert_eq!(g, expect);
        let s = jacobi_step(&StripState::new(&cfg, 0));
        assert_eq!(s.owned(), expect);
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn zero_iterations_is_the_initial_grid() {
        let cfg = JacobiConfig { iterations: 0, ..JacobiConfig::new(8, 1, 1) };
        assert_eq!(jacobi_oracle(&cfg), initial_grid(&cfg));
    }

    #[test]
    fn symmetry_is_preserved() {
        let n = 9;
        let cfg = JacobiConfig { interior: Interior::Constant(0.0), ..JacobiConfig::new(n, 1, 17) };
        let g = jacobi_oracle(&cfg);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(g[i * n + j], g[j * n + i]);
                assert_eq!(g[i * n + j], g[(n - 1 - i) * n + j]);
            }
        }
    }

    #[test]
    fn cells_are_order_independent_and_seeded() {
        let cfg = JacobiConfig::new(8, 1, 1);
        let g = initial_grid(&cfg);
        assert_eq!(g[3 * 8 + 5], initial_value(&cfg, 3, 5));
        assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
        let other = initial_grid(&JacobiConfig { seed: 1, ..cfg });
        assert_ne!(g, other);
    }

    #[test]
    fn strips_stitch_into_the_oracle() {
        let cfg = JacobiConfig { kernels: 4, ..JacobiConfig::new(16, 4, 5) };
        let mut strips: Vec<_> = (0..4).map(|i| StripState::new(&cfg, i)).collect();
        for _ in 0..5 {
            strips = strips.iter().map(jacobi_step).collect();
            for i in 0..4 {
                if i > 0 {
                    let row = strips[i - 1].bottom_row().to_vec();
                    strips[i].set_top_ghost(&row);
                }
                if i < 3 {
                    let row = strips[i + 1].top_row().to_vec();
                    strips[i].set_bottom_ghost(&row);
                }
            }
        }
        let stitched: Vec<f64> = strips.iter().flat_map(|s| s.owned().to_vec()).collect();
        assert_eq!(stitched, jacobi_oracle(&cfg));
    }
}
