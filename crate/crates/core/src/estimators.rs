//! Unbiased estimators of the squared distance covariance.
//!
//! [`dcov_usq_naive`] averages the symmetric four-point kernel
//! [`kernel_h`] over every 4-subset of the sample (`O(n⁴)`);
//! [`dcov_usq_fast`] computes the same U-statistic from distance-matrix
//! aggregates in `O(n²)`. Estimates may be negative and are reported as-is.

use rayon::prelude::*;
use serde::Serialize;

use crate::distances::{euclidean, pairwise_distances, DistanceMatrix};
use crate::error::{DcovError, Result};
use crate::sample::{Observation, PairedSample};

/// Which estimator produced a [`DCovEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EstimatorKind {
    #[serde(rename = "naive-U")]
    NaiveU,
    #[serde(rename = "fast-U")]
    FastU,
    #[serde(rename = "cf-mc")]
    CfMonteCarlo,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::NaiveU => "naive-U",
            EstimatorKind::FastU => "fast-U",
            EstimatorKind::CfMonteCarlo => "cf-mc",
        }
    }
}

/// A squared distance covariance estimate and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DCovEstimate {
    pub value: f64,
    pub kind: EstimatorKind,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Monte Carlo standard error, for randomized estimators only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
}

/// The 24 orderings of four indices.
const ORDERINGS: [[usize; 4]; 24] = {
    let mut out = [[0usize; 4]; 24];
    let mut c = 0;
    let mut i = 0;
    while i < 4 {
        let mut j = 0;
        while j < 4 {
            let mut k = 0;
            while k < 4 {
                if i != j && i != k && j != k {
                    out[c] = [i, j, k, 6 - i - j - k];
                    c += 1;
                }
                k += 1;
            }
            j += 1;
        }
        i += 1;
    }
    out
};

/// Kernel value from the 4×4 distance tables of the two components.
#[inline]
pub(crate) fn kernel_from_distances(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> f64 {
    let mut sum = 0.0;
    for &[i, j, k, l] in &ORDERINGS {
        let aij = a[i][j];
        sum += aij * b[i][j] - 2.0 * aij * b[i][k] + aij * b[k][l];
    }
    sum / 24.0
}

/// The symmetric kernel
/// `h(z₁,…,z₄) = (1/24) Σ [‖X_i−X_j‖‖Y_i−Y_j‖ − 2‖X_i−X_j‖‖Y_i−Y_k‖ + ‖X_i−X_j‖‖Y_k−Y_l‖]`
/// summed over all orderings `(i, j, k, l)` of the four observations.
pub fn kernel_h(z: &[Observation<'_>; 4]) -> Result<f64> {
    let p = z[0].x.len();
    let q = z[0].y.len();
    for o in z {
        if o.x.len() != p {
            return Err(DcovError::DimensionMismatch {
                expected: p,
                found: o.x.len(),
            });
        }
        if o.y.len() != q {
            return Err(DcovError::DimensionMismatch {
                expected: q,
                found: o.y.len(),
            });
        }
    }
    let mut a = [[0.0; 4]; 4];
    let mut b = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = euclidean(z[i].x, z[j].x);
            b[i][j] = euclidean(z[i].y, z[j].y);
        }
    }
    Ok(kernel_from_distances(&a, &b))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Average of [`kernel_h`] over all 4-subsets of the sample.
///
/// `O(n⁴)`; meant for small samples and as a reference for the fast form.
pub fn dcov_usq_naive(sample: &PairedSample) -> Result<DCovEstimate> {
    sample.require(4)?;
    let n = sample.n();
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    let partial: Vec<f64> = (0..n - 3)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            let mut a = [[0.0; 4]; 4];
            let mut b = [[0.0; 4]; 4];
            for j in i + 1..n {
                for k in j + 1..n {
                    for l in k + 1..n {
                        let idx = [i, j, k, l];
                        for r in 0..4 {
                            for c in 0..4 {
                                a[r][c] = dx.get(idx[r], idx[c]);
                                b[r][c] = dy.get(idx[r], idx[c]);
                            }
                        }
                        s += kernel_from_distances(&a, &b);
                    }
                }
            }
            s
        })
        .collect();
    let total: f64 = partial.iter().sum();
    Ok(DCovEstimate {
        value: total / binomial(n, 4),
        kind: EstimatorKind::NaiveU,
        n,
        p: sample.p(),
        q: sample.q(),
        standard_error: None,
    })
}

/// Raw aggregates of a pair of distance matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PairSums {
    pub n: usize,
    /// `Σ_{i,j} a_ij b_ij`
    pub cross: f64,
    /// `Σ_i (Σ_j a_ij)(Σ_k b_ik)`
    pub row_products: f64,
    pub grand_a: f64,
    pub grand_b: f64,
}

impl PairSums {
    pub(crate) fn of(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Self {
        let cross = dx
            .entries()
            .iter()
            .zip(dy.entries())
            .map(|(a, b)| a * b)
            .sum();
        let row_products = dx
            .row_sums()
            .iter()
            .zip(dy.row_sums())
            .map(|(a, b)| a * b)
            .sum();
        Self {
            n: dx.n(),
            cross,
            row_products,
            grand_a: dx.grand_sum(),
            grand_b: dy.grand_sum(),
        }
    }

    /// The `O(n²)` U-statistic.
    #[inline]
    pub(crate) fn u_statistic(&self) -> f64 {
        let n = self.n as f64;
        (self.cross + self.grand_a * self.grand_b / ((n - 1.0) * (n - 2.0))
            - 2.0 / (n - 2.0) * self.row_products)
            / (n * (n - 3.0))
    }
}

fn check_pair(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Result<()> {
    if dx.n() != dy.n() {
        return Err(DcovError::DimensionMismatch {
            expected: dx.n(),
            found: dy.n(),
        });
    }
    if dx.n() < 4 {
        return Err(DcovError::SampleTooSmall {
            needed: 4,
            found: dx.n(),
        });
    }
    Ok(())
}

/// `O(n²)` unbiased estimator from two distance matrices:
///
/// `[Σ a_ij b_ij + Σa Σb / ((n−1)(n−2)) − 2/(n−2) Σ_i a_i· b_i·] / (n(n−3))`.
pub fn dcov_usq_fast(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Result<DCovEstimate> {
    check_pair(dx, dy)?;
    Ok(DCovEstimate {
        value: PairSums::of(dx, dy).u_statistic(),
        kind: EstimatorKind::FastU,
        n: dx.n(),
        p: dx.dim(),
        q: dy.dim(),
        standard_error: None,
    })
}

/// Same value as [`dcov_usq_fast`] without materializing the distance
/// matrices: `O(n)` memory, for samples too large to hold `n²` entries.
pub fn dcov_usq_streaming(sample: &PairedSample) -> Result<DCovEstimate> {
    sample.require(4)?;
    let n = sample.n();
    let (x, y) = (sample.x(), sample.y());
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, yi) = (x.row(i), y.row(i));
            let (mut ra, mut rb, mut cross) = (0.0, 0.0, 0.0);
            for j in 0..n {
                let a = euclidean(xi, x.row(j));
                let b = euclidean(yi, y.row(j));
                ra += a;
                rb += b;
                cross += a * b;
            }
            (ra, rb, cross)
        })
        .collect();
    let mut sums = PairSums {
        n,
        cross: 0.0,
        row_products: 0.0,
        grand_a: 0.0,
        grand_b: 0.0,
    };
    for &(ra, rb, cross) in &rows {
        sums.cross += cross;
        sums.row_products += ra * rb;
        sums.grand_a += ra;
        sums.grand_b += rb;
    }
    Ok(DCovEstimate {
        value: sums.u_statistic(),
        kind: EstimatorKind::FastU,
        n,
        p: sample.p(),
        q: sample.q(),
        standard_error: None,
    })
}

/// Convenience wrapper: distance matrices plus [`dcov_usq_fast`].
pub fn dcov_usq(sample: &PairedSample) -> Result<DCovEstimate> {
    sample.require(4)?;
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    dcov_usq_fast(&dx, &dy)
}

/// Unbiased squared distance variance `V²(X, X)`; can be slightly negative.
pub fn dvar_usq(dx: &DistanceMatrix) -> Result<f64> {
    Ok(dcov_usq_fast(dx, dx)?.value)
}

/// Squared distance correlation from precomputed distance matrices.
pub fn dcor_sq_from(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Result<f64> {
    let xy = dcov_usq_fast(dx, dy)?.value;
    let xx = dvar_usq(dx)?;
    let yy = dvar_usq(dy)?;
    if xx <= 0.0 || yy <= 0.0 {
        return Ok(0.0);
    }
    Ok((xy / (xx * yy).sqrt()).clamp(-1.0, 1.0))
}

/// Squared distance correlation `V²(X,Y) / √(V²(X,X) V²(Y,Y))` with the
/// unbiased estimates plugged in.
///
/// Returns 0 when either distance variance is not positive. The result is
/// clamped to `[−1, 1]`; negative values are kept.
pub fn dcor_sq(sample: &PairedSample) -> Result<f64> {
    sample.require(4)?;
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    dcor_sq_from(&dx, &dy)
}

/// Squared Frobenius norm of the `p × q` sample cross-covariance matrix.
pub fn classical_cov_stat(sample: &PairedSample) -> Result<f64> {
    sample.require(2)?;
    let xc = centered(sample.x());
    let yc = centered(sample.y());
    Ok(cross_cov_frobenius(&xc, &yc, sample.p(), sample.q(), |i| i))
}

/// Column-centered copy of a block, row-major.
pub(crate) fn centered(block: &crate::sample::Block) -> Vec<f64> {
    let (n, d) = (block.nrows(), block.ncols());
    let mut mean = vec![0.0; d];
    for r in block.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = Vec::with_capacity(n * d);
    for r in block.rows() {
        out.extend(r.iter().zip(&mean).map(|(v, m)| v - m));
    }
    out
}

/// `‖(1/(n−1)) Σ_i x_i y_{π(i)}ᵀ‖²_F` for centered row-major blocks.
pub(crate) fn cross_cov_frobenius(
    xc: &[f64],
    yc: &[f64],
    p: usize,
    q: usize,
    pairing: impl Fn(usize) -> usize,
) -> f64 {
    let n = xc.len() / p;
    let mut c = vec![0.0; p * q];
    for i in 0..n {
        let xi = &xc[i * p..(i + 1) * p];
        let j = pairing(i);
        let yj = &yc[j * q..(j + 1) * q];
        for (a, xa) in xi.iter().enumerate() {
            for (b, yb) in yj.iter().enumerate() {
                c[a * q + b] += xa * yb;
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    c.iter().map(|v| (v * scale) * (v * scale)).sum()
}
