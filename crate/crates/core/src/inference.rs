//! Permutation and asymptotic independence tests.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::distances::{pairwise_distances, DistanceMatrix};
use crate::error::{DcovError, Result};
use crate::estimators::{centered, cross_cov_frobenius, dcov_usq_fast, dcov_usq_naive, PairSums};
use crate::rng::{blocks, derive_seed, fisher_yates, random_permutation, stream_rng};
use crate::sample::PairedSample;
use crate::ustat_theory::{sample_degenerate_limit, spectrum_from};

/// Test statistic for [`permutation_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Statistic {
    /// `O(n²)` unbiased distance covariance.
    DcovFast,
    /// `O(n⁴)` kernel average; same value, for cross-checking.
    DcovNaive,
    /// Squared Frobenius norm of the sample cross-covariance.
    ClassicalCov,
}

impl Statistic {
    pub fn tag(self) -> &'static str {
        match self {
            Statistic::DcovFast => "dcov-fast",
            Statistic::DcovNaive => "dcov-naive",
            Statistic::ClassicalCov => "classical-cov",
        }
    }

    fn min_n(self) -> usize {
        match self {
            Statistic::ClassicalCov => 2,
            _ => 4,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Statistic {
    type Err = DcovError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcov-fast" => Ok(Statistic::DcovFast),
            "dcov-naive" => Ok(Statistic::DcovNaive),
            "classical-cov" => Ok(Statistic::ClassicalCov),
            _ => Err(DcovError::UnknownTag {
                kind: "statistic",
                tag: s.to_string(),
            }),
        }
    }
}

impl Serialize for Statistic {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Permutation,
    Asymptotic,
}

/// Outcome of an independence test. Field order is the JSON field order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub method: Method,
    pub statistic: Statistic,
    /// For asymptotic tests this is `n · Ω̂`.
    pub observed: f64,
    pub replicates: usize,
    pub p_value: f64,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub runtime_ms: u64,
}

impl TestReport {
    /// Equality ignoring `runtime_ms`.
    pub fn same_result(&self, other: &TestReport) -> bool {
        TestReport {
            runtime_ms: 0,
            ..self.clone()
        } == TestReport {
            runtime_ms: 0,
            ..other.clone()
        }
    }
}

/// `(1 + #{r ≥ observed − tie_tolerance}) / (len + 1)`; ties count against the null.
pub fn p_value_from(observed: f64, replicates: &[f64], tie_tolerance: f64) -> f64 {
    let threshold = observed - tie_tolerance;
    let exceed = replicates.iter().filter(|&&r| r >= threshold).count();
    (1 + exceed) as f64 / (replicates.len() + 1) as f64
}

/// Statistic evaluated under arbitrary relabelings of the Y observations,
/// with all permutation-invariant work done once.
enum Engine<'a> {
    Dcov {
        /// Strict upper triangle of the X distances, row by row.
        upper: Vec<f64>,
        offsets: Vec<usize>,
        dy: DistanceMatrix,
        ra: Vec<f64>,
        grand_a: f64,
    },
    Naive(&'a PairedSample),
    Classical {
        xc: Vec<f64>,
        yc: Vec<f64>,
        p: usize,
        q: usize,
    },
}

impl<'a> Engine<'a> {
    fn new(sample: &'a PairedSample, statistic: Statistic) -> Result<Self> {
        Ok(match statistic {
            Statistic::DcovFast => {
                let dx = pairwise_distances(sample.x())?;
                let dy = pairwise_distances(sample.y())?;
                let n = dx.n();
                let mut upper = Vec::with_capacity(n * (n - 1) / 2);
                let mut offsets = Vec::with_capacity(n + 1);
                for i in 0..n {
                    offsets.push(upper.len());
                    upper.extend_from_slice(&dx.row(i)[i + 1..]);
                }
                offsets.push(upper.len());
                Engine::Dcov {
                    upper,
                    offsets,
                    ra: dx.row_sums().to_vec(),
                    grand_a: dx.grand_sum(),
                    dy,
                }
            }
            Statistic::DcovNaive => Engine::Naive(sample),
            Statistic::ClassicalCov => Engine::Classical {
                xc: centered(sample.x()),
                yc: centered(sample.y()),
                p: sample.p(),
                q: sample.q(),
            },
        })
    }

    /// Replicates this close to the observed value are ties: permutations
    /// that leave the statistic unchanged in exact arithmetic can still move
    /// it by rounding, on the scale of the largest summands.
    fn tie_tolerance(&self) -> f64 {
        const REL: f64 = 1e-9;
        match self {
            Engine::Dcov {
                upper, dy, grand_a, ..
            } => {
                let pairs = (2 * upper.len()).max(1) as f64;
                REL * (grand_a / pairs) * (dy.grand_sum() / pairs)
            }
            Engine::Naive(sample) => {
                let n = sample.n();
                let mean = |b: &crate::sample::Block| {
                    let d = pairwise_distances(b).expect("validated sample");
                    d.grand_sum() / (n * (n - 1)) as f64
                };
                REL * mean(sample.x()) * mean(sample.y())
            }
            Engine::Classical { xc, yc, .. } => {
                let n = (xc.len().max(1)) as f64;
                let ss = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / n;
                REL * ss(xc) * ss(yc)
            }
        }
    }

    /// Statistic of the sample with Y observation `perm[i]` paired to X observation `i`.
    fn eval(&self, perm: &[usize]) -> f64 {
        match self {
            Engine::Dcov {
                upper,
                offsets,
                dy,
                ra,
                grand_a,
            } => {
                let n = perm.len();
                assert!(n == dy.n() && perm.iter().all(|&j| j < n));
                let mut half_cross = 0.0;
                for i in 0..n {
                    let a = &upper[offsets[i]..offsets[i + 1]];
                    let b = dy.row(perm[i]);
                    let pj = &perm[i + 1..];
                    half_cross += gather_dot(a, b, pj);
                }
                let rb = dy.row_sums();
                let row_products = ra.iter().zip(perm).map(|(a, &j)| a * rb[j]).sum();
                PairSums {
                    n,
                    cross: 2.0 * half_cross,
                    row_products,
                    grand_a: *grand_a,
                    grand_b: dy.grand_sum(),
                }
                .u_statistic()
            }
            Engine::Naive(sample) => {
                dcov_usq_naive(&sample.with_y_permuted(perm))
                    .expect("size checked")
                    .value
            }
            Engine::Classical { xc, yc, p, q } => cross_cov_frobenius(xc, yc, *p, *q, |i| perm[i]),
        }
    }
}

/// `Σ_k a[k] · b[idx[k]]` with four independent accumulators.
#[inline]
fn gather_dot(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
    assert!(a.len() == idx.len());
    let mut acc = [0.0; 4];
    let mut ac = a.chunks_exact(4);
    let mut ic = idx.chunks_exact(4);
    // SAFETY: every index comes from a permutation of 0..b.len(), checked by the caller.
    unsafe {
        for (a4, i4) in (&mut ac).zip(&mut ic) {
            acc[0] += a4[0] * b.get_unchecked(i4[0]);
            acc[1] += a4[1] * b.get_unchecked(i4[1]);
            acc[2] += a4[2] * b.get_unchecked(i4[2]);
            acc[3] += a4[3] * b.get_unchecked(i4[3]);
        }
        for (av, &j) in ac.remainder().iter().zip(ic.remainder()) {
            acc[0] += av * b.get_unchecked(j);
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

fn check_test_args(sample: &PairedSample, statistic: Statistic, b: usize) -> Result<()> {
    sample.require(statistic.min_n())?;
    if b == 0 {
        return Err(DcovError::InvalidArgument(
            "need at least one permutation".into(),
        ));
    }
    Ok(())
}

/// Observed statistic and its values under `b` seeded random relabelings of Y.
///
/// Replicate `k` uses the permutation drawn from stream `k / REPLICATE_BLOCK`
/// of `seed`, so the output does not depend on the number of worker threads.
pub fn permutation_replicates(
    sample: &PairedSample,
    statistic: Statistic,
    b: usize,
    seed: u64,
) -> Result<PermutationDraws> {
    check_test_args(sample, statistic, b)?;
    let engine = Engine::new(sample, statistic)?;
    let n = sample.n();
    let identity: Vec<usize> = (0..n).collect();
    let observed = engine.eval(&identity);
    let chunks: Vec<Vec<f64>> = blocks(b)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(k, range)| {
            let mut rng = stream_rng(seed, k);
            let mut perm = identity.clone();
            range
                .map(|_| {
                    perm.copy_from_slice(&identity);
                    fisher_yates(&mut rng, &mut perm);
                    engine.eval(&perm)
                })
                .collect()
        })
        .collect();
    Ok(PermutationDraws {
        observed,
        replicates: chunks.concat(),
        tie_tolerance: engine.tie_tolerance(),
    })
}

/// Output of [`permutation_replicates`].
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationDraws {
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub tie_tolerance: f64,
}

impl PermutationDraws {
    pub fn p_value(&self) -> f64 {
        p_value_from(self.observed, &self.replicates, self.tie_tolerance)
    }
}

/// Permutation test of independence with `p = (1 + #{stat_b ≥ observed}) / (B + 1)`.
pub fn permutation_test(
    sample: &PairedSample,
    statistic: Statistic,
    b: usize,
    seed: u64,
) -> Result<TestReport> {
    let start = Instant::now();
    let draws = permutation_replicates(sample, statistic, b, seed)?;
    Ok(TestReport {
        method: Method::Permutation,
        statistic,
        observed: draws.observed,
        replicates: b,
        p_value: draws.p_value(),
        seed,
        n: sample.n(),
        p: sample.p(),
        q: sample.q(),
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

/// Test of independence against the degenerate limit law `6 Σ λ_i (Z_i² − 1)`.
///
/// The spectrum is estimated from the sample with its Y labels permuted once,
/// which imposes the null coupling while keeping both marginals.
pub fn asymptotic_test(
    sample: &PairedSample,
    basis_size: usize,
    mixture_reps: usize,
    seed: u64,
) -> Result<TestReport> {
    let start = Instant::now();
    let needed = basis_size.max(20);
    sample.require(needed)?;
    if mixture_reps == 0 {
        return Err(DcovError::InvalidArgument(
            "need at least one mixture draw".into(),
        ));
    }
    let n = sample.n();
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    let observed = n as f64 * dcov_usq_fast(&dx, &dy)?.value;

    let perm = random_permutation(&mut stream_rng(derive_seed(seed, 0), 0), n);
    let spectrum = spectrum_from(&dx, &dy.permuted(&perm), basis_size, derive_seed(seed, 1))?;
    let draws = sample_degenerate_limit(&spectrum, mixture_reps, derive_seed(seed, 2))?;
    Ok(TestReport {
        method: Method::Asymptotic,
        statistic: Statistic::DcovFast,
        observed,
        replicates: mixture_reps,
        // Draws are exact zeros when the spectrum is.
        p_value: p_value_from(observed, &draws, 0.0),
        seed,
        n,
        p: sample.p(),
        q: sample.q(),
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}
