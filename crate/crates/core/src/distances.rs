//! Dense pairwise Euclidean distance matrices with cached row sums.

use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{DcovError, Result};
use crate::sample::Block;

static CONSTRUCTIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of distance matrices built by [`pairwise_distances`] in this process.
#[doc(hidden)]
pub fn construction_count() -> usize {
    CONSTRUCTIONS.load(Ordering::Relaxed)
}

static WATCHED: AtomicUsize = AtomicUsize::new(0);
static WATCH_HITS: AtomicUsize = AtomicUsize::new(0);

/// Starts counting the distance matrices built from this particular block
/// (identified by its buffer address) and resets the count.
#[doc(hidden)]
pub fn watch_constructions(block: &Block) {
    WATCHED.store(block.as_slice().as_ptr() as usize, Ordering::SeqCst);
    WATCH_HITS.store(0, Ordering::SeqCst);
}

/// Distance matrices built from the watched block since [`watch_constructions`].
#[doc(hidden)]
pub fn watched_constructions() -> usize {
    WATCH_HITS.load(Ordering::SeqCst)
}

/// Symmetric `n × n` matrix of Euclidean distances between the rows of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    dim: usize,
    entries: Vec<f64>,
    row_sums: Vec<f64>,
    grand_sum: f64,
}

impl DistanceMatrix {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Column count of the block the distances were computed from.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn grand_sum(&self) -> f64 {
        self.grand_sum
    }

    /// Relabels the points: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> DistanceMatrix {
        let n = self.n;
        let mut entries = Vec::with_capacity(n * n);
        for &pi in perm {
            let row = self.row(pi);
            entries.extend(perm.iter().map(|&pj| row[pj]));
        }
        DistanceMatrix {
            n,
            dim: self.dim,
            entries,
            row_sums: perm.iter().map(|&pi| self.row_sums[pi]).collect(),
            grand_sum: self.grand_sum,
        }
    }

    fn from_entries(n: usize, dim: usize, entries: Vec<f64>) -> Self {
        let row_sums: Vec<f64> = entries
            .chunks_exact(n.max(1))
            .map(|r| r.iter().sum())
            .collect();
        let grand_sum = row_sums.iter().sum();
        Self {
            n,
            dim,
            entries,
            row_sums,
            grand_sum,
        }
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| {
            let d = u - v;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Distances from `point` to every row of `block`.
pub(crate) fn distances_to(point: &[f64], block: &Block) -> Vec<f64> {
    block.rows().map(|r| euclidean(point, r)).collect()
}

/// All pairwise distances between the rows of `block`.
///
/// Rejects blocks containing NaN or infinity, naming the first offending row.
pub fn pairwise_distances(block: &Block) -> Result<DistanceMatrix> {
    let n = block.nrows();
    if n == 0 {
        return Err(DcovError::SampleTooSmall {
            needed: 1,
            found: 0,
        });
    }
    if let Some(row) = block.first_non_finite_row() {
        return Err(DcovError::NonFinite {
            block: "input",
            row,
        });
    }
    CONSTRUCTIONS.fetch_add(1, Ordering::Relaxed);
    if block.as_slice().as_ptr() as usize == WATCHED.load(Ordering::SeqCst) {
        WATCH_HITS.fetch_add(1, Ordering::SeqCst);
    }

    let mut entries = vec![0.0; n * n];
    entries.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let xi = block.row(i);
        for (j, slot) in out.iter_mut().enumerate() {
            if j != i {
                *slot = euclidean(xi, block.row(j));
            }
        }
    });
    Ok(DistanceMatrix::from_entries(n, block.ncols(), entries))
}
