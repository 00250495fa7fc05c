//! One kernel's slice of the global address space.
//!
//! A [`Partition`] is a flat, zero-initialised byte store shared between
//! its owner kernel and that kernel's message engine. Each operation takes
//! the partition lock once, so a reader never observes half of a scatter.

use std::sync::RwLock;

use thiserror::Error;

use crate::protocol::{DestLayout, KernelId, StridedSpec, VectoredSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("OUT_OF_BOUNDS: {len} bytes at offset {offset} exceeds partition of {size} bytes")]
    OutOfBounds { offset: u64, len: u64, size: u64 },
    #[error("LENGTH_MISMATCH: layout covers {expected} bytes, data is {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
}

/// Where a gather reads from or a scatter writes to.
///
/// Contiguous and strided layouts are relative to a base offset; vectored
/// entries carry absolute offsets and ignore it.
#[derive(Debug, Clone, Copy)]
pub enum Layout<'a> {
    Contiguous(u64),
    Strided(StridedSpec),
    Vectored(&'a VectoredSpec),
}

impl<'a> From<&'a DestLayout> for Layout<'a> {
    fn from(l: &'a DestLayout) -> Self {
        match l {
            DestLayout::Strided(s) => Layout::Strided(*s),
            DestLayout::Vectored(v) => Layout::Vectored(v),
        }
    }
}

impl Layout<'_> {
    pub fn total_bytes(&self) -> u64 {
        match self {
            Layout::Contiguous(n) => *n,
            Layout::Strided(s) => s.total_bytes(),
            Layout::Vectored(v) => v.total_bytes(),
        }
    }

    /// Resolves the layout to `(offset, len)` extents, bounds-checked
    /// against a partition of `size` bytes.
    pub fn extents(&self, base: u64, size: u64) -> Result<Vec<(usize, usize)>, MemoryError> {
        let check = |offset: Option<u64>, len: u64| -> Result<(usize, usize), MemoryError> {
            let oob = MemoryError::OutOfBounds { offset: offset.unwrap_or(u64::MAX), len, size };
            let offset = offset.ok_or(oob.clone())?;
            match offset.checked_add(len) {
                Some(end) if end <= size => Ok((offset as usize, len as usize)),
                _ => Err(oob),
            }
        };
        match self {
            Layout::Contiguous(len) => Ok(vec![check(Some(base), *len)?]),
            Layout::Strided(s) => (0..s.block_count as u64)
                .map(|i| {
                    let off = (s.stride_bytes as u64).checked_mul(i).and_then(|d| base.checked_add(d));
                    check(off, s.block_bytes as u64)
                })
                .collect(),
            Layout::Vectored(v) => v.entries.iter().map(|e| check(Some(e.offset), e.len as u64)).collect(),
        }
    }
}

#[derive(Debug)]
pub struct Partition {
    owner: KernelId,
    data: RwLock<Box<[u8]>>,
}

impl Partition {
    pub fn new(owner: KernelId, size_bytes: u64) -> Self {
        Partition { owner, data: RwLock::new(vec![0u8; size_bytes as usize].into_boxed_slice()) }
    }

    pub fn owner(&self) -> KernelId {
        self.owner
    }

    pub fn size(&self) -> u64 {
        self.data.read().unwrap().len() as u64
    }

    pub fn read(&self, offset: u64, len: u64) -> Result<Vec<u8>, MemoryError> {
        self.gather(offset, Layout::Contiguous(len))
    }

    pub fn write(&self, offset: u64, data: &[u8]) -> Result<(), MemoryError> {
        self.scatter(offset, Layout::Contiguous(data.len() as u64), data)
    }

    /// Concatenates the blocks addressed by `layout`, in layout order.
    pub fn gather(&self, base: u64, layout: Layout<'_>) -> Result<Vec<u8>, MemoryError> {
        let data = self.data.read().unwrap();
        let extents = layout.extents(base, data.len() as u64)?;
        let mut out = Vec::with_capacity(layout.total_bytes() as usize);
        for (off, len) in extents {
            out.extend_from_slice(&data[off..off + len]);
        }
        Ok(out)
    }

    /// Inverse of [`gather`](Self::gather). Nothing is written unless every
    /// block is in bounds and `data` has exactly the layout's length.
    pub fn scatter(&self, base: u64, layout: Layout<'_>, data: &[u8]) -> Result<(), MemoryError> {
        let expected = layout.total_bytes();
        if expected != data.len() as u64 {
            return Err(MemoryError::LengthMismatch { expected, actual: data.len() as u64 });
        }
        let mut mem = self.data.write().unwrap();
        let extents = layout.extents(base, mem.len() as u64)?;
        let mut src = 0;
        for (off, len) in extents {
            mem[off..off + len].copy_from_slice(&data[src..src + len]);
            src += len;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.data.read().unwrap().to_vec()
    }

    /// Runs `f` over the whole partition under the read lock.
    pub fn with_bytes<R>(&self, f: impl FnOnce(&[u8]) -> R) -> R {
        f(&self.data.read().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn filled(n: u64) -> Partition {
        let p = Partition::new(KernelId(0), n);
        p.write(0, &(0..n).map(|i| i as u8).collect::<Vec<_>>()).unwrap();
        p
    }

    /// Flat-array reference: applies a layout one byte at a time.
    fn oracle_scatter(mem: &mut [u8], base: u64, layout: Layout<'_>, data: &[u8]) {
        let mut k = 0;
        match layout {
            Layout::Contiguous(n) => {
                for i in 0..n {
                    mem[(base + i) as usize] = data[k];
                    k += 1;
                }
            }
            Layout::Strided(s) => {
                for b in 0..s.block_count as u64 {
                    for i in 0..s.block_bytes as u64 {
                        mem[(base + b * s.stride_bytes as u64 + i) as usize] = data[k];
                        k += 1;
                    }
                }
            }
            Layout::Vectored(v) => {
                for e in &v.entries {
                    for i in 0..e.len as u64 {
                        mem[(e.offset + i) as usize] = data[k];
                        k += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn zero_length_and_read_after_write() {
        let p = Partition::new(KernelId(3), 64);
        assert_eq!(p.owner(), KernelId(3));
        assert!(p.read(0, 0).unwrap().is_empty());
        p.write(0, &[]).unwrap();
        assert_eq!(p.snapshot(), vec![0; 64]);
        p.write(8, &[1, 2, 3, 4]).unwrap();
        assert_eq!(p.read(8, 4).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn boundary_violation() {
        let p = Partition::new(KernelId(0), 64);
        assert!(matches!(p.read(63, 2), Err(MemoryError::OutOfBounds { .. })));
        assert!(matches!(p.read(u64::MAX, 2), Err(MemoryError::OutOfBounds { .. })));
        assert!(p.write(62, &[1, 2, 3]).is_err());
        assert_eq!(p.snapshot(), vec![0; 64]);
        assert!(p.read(63, 1).is_ok());
    }

    #[test]
    fn write_frame_property() {
        let p = filled(32);
        let before = p.snapshot();
        p.write(10, &[0xff; 5]).unwrap();
        let after = p.snapshot();
        for i in 0..32 {
            if (10..15).contains(&i) {
                assert_eq!(after[i], 0xff);
            } else {
                assert_eq!(after[i], before[i]);
            }
        }
    }

    #[test]
    fn disjoint_writes_match_flat_oracle() {
        let p = Partition::new(KernelId(0), 48);
        let mut flat = vec![0u8; 48];
        for (off, val, len) in [(0u64, 1u8, 8usize), (40, 2, 8), (16, 3, 4), (24, 4, 12)] {
            p.write(off, &vec![val; len]).unwrap();
            flat[off as usize..off as usize + len].fill(val);
        }
        assert_eq!(p.snapshot(), flat);
    }

    #[test]
    fn gather_examples() {
        let p = filled(16);
        let s = StridedSpec::new(4, 4, 3);
        assert_eq!(p.gather(0, Layout::Strided(s)).unwrap(), p.read(0, 12).unwrap());

        let p = filled(6);
        assert_eq!(p.gather(0, Layout::Strided(StridedSpec::new(2, 4, 2))).unwrap(), vec![0, 1, 4, 5]);

        let p = filled(8);
        let v = VectoredSpec::new([(0, 2), (6, 2)]);
        assert_eq!(p.gather(99, Layout::Vectored(&v)).unwrap(), vec![0, 1, 6, 7]);
        let bad = VectoredSpec::new([(0, 2), (7, 2)]);
        assert!(p.gather(0, Layout::Vectored(&bad)).is_err());
    }

    #[test]
    fn scatter_examples() {
        let p = filled(8);
        p.scatter(0, Layout::Strided(StridedSpec::new(2, 4, 2)), &[9, 9, 8, 8]).unwrap();
        assert_eq!(p.snapshot(), vec![9, 9, 2, 3, 8, 8, 6, 7]);

        assert_eq!(
            p.scatter(0, Layout::Strided(StridedSpec::new(2, 4, 2)), &[1, 2, 3]),
            Err(MemoryError::LengthMismatch { expected: 4, actual: 3 })
        );
        // partially out of range: nothing written
        let before = p.snapshot();
        assert!(p.scatter(4, Layout::Strided(StridedSpec::new(2, 4, 2)), &[1, 2, 3, 4]).is_err());
        assert_eq!(p.snapshot(), before);
    }

    #[test]
    fn concurrent_scatter_is_never_torn() {
        use std::sync::Arc;
        let p = Arc::new(Partition::new(KernelId(0), 4096));
        let w = {
            let p = p.clone();
            std::thread::spawn(move || {
                for v in 0..200u8 {
                    p.scatter(0, Layout::Strided(StridedSpec::new(64, 128, 32)), &[v; 2048]).unwrap();
                }
            })
        };
        for _ in 0..200 {
            let g = p.gather(0, Layout::Strided(StridedSpec::new(64, 128, 32))).unwrap();
            assert!(g.iter().all(|b| *b == g[0]));
        }
        w.join().unwrap();
    }

    fn arb_layout() -> impl Strategy<Value = (u64, DestLayoutOrLen)> {
        prop_oneof![
            (0u64..256, 0u64..256).prop_map(|(b, n)| (b, DestLayoutOrLen::Len(n))),
            (0u64..256, 0u32..16, 0u32..16, 1u32..16)
                .prop_map(|(b, blk, extra, n)| (b, DestLayoutOrLen::Strided(StridedSpec::new(blk, blk + extra, n)))),
            prop::collection::vec((0u64..480, 0u32..32), 1..=16)
                .prop_map(|e| (0, DestLayoutOrLen::Vectored(VectoredSpec::new(e)))),
        ]
    }

    #[derive(Debug, Clone)]
    enum DestLayoutOrLen {
        Len(u64),
        Strided(StridedSpec),
        Vectored(VectoredSpec),
    }

    impl DestLayoutOrLen {
        fn layout(&self) -> Layout<'_> {
            match self {
                DestLayoutOrLen::Len(n) => Layout::Contiguous(*n),
                DestLayoutOrLen::Strided(s) => Layout::Strided(*s),
                DestLayoutOrLen::Vectored(v) => Layout::Vectored(v),
            }
        }
    }

    proptest! {
        #[test]
        fn scatter_matches_oracle_and_gather_inverts((base, l) in arb_layout(), seed in any::<u8>()) {
            let p = filled(1024);
            let layout = l.layout();
            let data: Vec<u8> = (0..layout.total_bytes()).map(|i| (i as u8).wrapping_mul(7) ^ seed).collect();
            let mut flat = p.snapshot();
            p.scatter(base, layout, &data).unwrap();
            oracle_scatter(&mut flat, base, layout, &data);
            prop_assert_eq!(p.snapshot(), flat);
            // overlapping vectored entries: only the last write survives, so
            // duality holds for non-overlapping layouts only
            if !matches!(l, DestLayoutOrLen::Vectored(_)) {
                prop_assert_eq!(p.gather(base, layout).unwrap(), data);
            }
        }

        #[test]
        fn strided_degenerates_to_contiguous(base in 0u64..128, blk in 0u32..32, n in 1u32..8) {
            let p = filled(512);
            let s = StridedSpec::new(blk, blk, n);
            prop_assert_eq!(p.gather(base, Layout::Strided(s)).unwrap(), p.read(base, s.total_bytes()).unwrap());
        }

        #[test]
        fn single_vector_entry_is_contiguous(off in 0u64..400, len in 0u32..100) {
            let p = filled(512);
            let v = VectoredSpec::new([(off, len)]);
            prop_assert_eq!(p.gather(0, Layout::Vectored(&v)).unwrap(), p.read(off, len as u64).unwrap());
        }
    }
}
