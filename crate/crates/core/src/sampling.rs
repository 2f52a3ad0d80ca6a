//! Seeded random streams and replicated Latin hypercube designs.
//!
//! Monte Carlo estimates in this crate are built from `B` independent Latin
//! hypercube blocks. Stratification inside a block removes most of the
//! sampling noise of smooth statistics, and because the blocks are
//! independent, a delete-one-block jackknife still gives an honest standard
//! error.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default number of independent blocks used for jackknife errors.
pub const DEFAULT_BATCHES: usize = 20;

/// A ChaCha8 generator for `(seed, stream)`.
#[must_use]
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A uniform draw strictly inside (0, 1).
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Contiguous index ranges splitting `n` items into `batches` nearly equal blocks.
#[must_use]
pub fn batch_ranges(n: usize, batches: usize) -> Vec<Range<usize>> {
    (0..batches)
        .map(|b| (b * n / batches)..((b + 1) * n / batches))
        .collect()
}

/// Uniform design of `n` points in `(0,1)^dims`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub dims: usize,
    pub batches: Vec<Range<usize>>,
    points: Vec<f64>,
}

impl Design {
    /// Point `j` of the design.
    #[must_use]
    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dims..(j + 1) * self.dims]
    }
}

/// `batches` independent Latin hypercube blocks with `n` points in total.
///
/// Block `b` draws from stream `b` of `seed`, so designs are reproducible and
/// independent of thread scheduling.
#[must_use]
pub fn latin_hypercube(seed: u64, n: usize, dims: usize, batches: usize) -> Design {
    let ranges = batch_ranges(n, batches.max(1));
    let mut points = vec![0.0; n * dims];
    for (b, range) in ranges.iter().enumerate() {
        let mut rng = stream_rng(seed, b as u64);
        let len = range.len();
        let mut perm: Vec<usize> = (0..len).collect();
        for d in 0..dims {
            perm.shuffle(&mut rng);
            for (k, j) in range.clone().enumerate() {
                points[j * dims + d] = (perm[k] as f64 + open_uniform(&mut rng)) / len as f64;
            }
        }
    }
    Design {
        n,
        dims,
        batches: ranges,
        points,
    }
}

/// Delete-one-block jackknife standard error of a statistic.
///
/// `leave_out(b)` must return the statistic recomputed without block `b`.
pub fn jackknife_se(batches: usize, mut leave_out: impl FnMut(usize) -> f64) -> f64 {
    if batches < 2 {
        return f64::NAN;
    }
    let values: Vec<f64> = (0..batches).map(&mut leave_out).collect();
    let mean = values.iter().sum::<f64>() / batches as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    crate::special::sqrt(ss * (batches as f64 - 1.0) / batches as f64)
}

/// Indices of all draws outside block `b`.
#[must_use]
pub fn complement(ranges: &[Range<usize>], b: usize) -> Vec<usize> {
    ranges
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != b)
        .flat_map(|(_, r)| r.clone())
        .collect()
}
