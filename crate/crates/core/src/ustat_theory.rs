//! Empirical Hoeffding projections of the distance-covariance kernel and
//! the two limit laws of the U-statistic.
//!
//! `h₁(z) = E h(z, Z₂, Z₃, Z₄)` and `h₂(z, z′) = E h(z, z′, Z₃, Z₄)` are
//! estimated by averaging the kernel over all triples (pairs) of sample
//! observations. Neither average is formed term by term: the kernel is a sum
//! of products of one X-distance and one Y-distance, and each product,
//! summed over all index assignments, reduces to row sums, grand sums and
//! inner products of distance vectors. This makes every exhaustive average
//! `O(n)` once the sample's distance matrices are known.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::distances::{distances_to, pairwise_distances, DistanceMatrix};
use crate::error::{DcovError, Result};
use crate::estimators::kernel_h;
use crate::rng::{blocks, stream_rng};
use crate::sample::{Observation, PairedSample};

/// The kernel as 72 signed products `coef · a(s₁,s₂) · b(s₃,s₄)` over slot
/// indices `0..4`, with the common factor 1/24 left out.
fn kernel_terms() -> impl Iterator<Item = (f64, (usize, usize), (usize, usize))> {
    let mut out = Vec::with_capacity(72);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                if i == j || i == k || j == k {
                    continue;
                }
                let l = 6 - i - j - k;
                out.push((1.0, (i, j), (i, j)));
                out.push((-2.0, (i, j), (i, k)));
                out.push((1.0, (i, j), (k, l)));
            }
        }
    }
    out.into_iter()
}

/// Sample-level aggregates of the two distance matrices.
#[derive(Debug, Clone)]
struct Aggregates {
    n: usize,
    ra: Vec<f64>,
    rb: Vec<f64>,
    ga: f64,
    gb: f64,
    /// `Σ_{i,j} a_ij b_ij`
    cross: f64,
    /// `Σ_i ra_i rb_i`
    row_products: f64,
}

impl Aggregates {
    fn of(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Self {
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
            ra: dx.row_sums().to_vec(),
            rb: dy.row_sums().to_vec(),
            ga: dx.grand_sum(),
            gb: dy.grand_sum(),
            cross,
            row_products,
        }
    }
}

/// Everything the exhaustive triple average needs about one evaluation point
/// `z` (distance vectors `u` in X, `v` in Y) and the sample it is averaged over.
#[derive(Debug, Clone, Copy)]
struct TripleSums {
    n: f64,
    su: f64,
    sv: f64,
    suv: f64,
    /// `Σ_c u_c rb_c`
    su_rb: f64,
    /// `Σ_c v_c ra_c`
    sv_ra: f64,
    ga: f64,
    gb: f64,
    cross: f64,
    row_products: f64,
}

#[derive(Clone, Copy)]
enum TripleFactor {
    /// Distance from the evaluation point to sample slot `s`.
    Point(usize),
    /// Distance between two sample slots.
    Pair(usize, usize),
}

fn triple_factor(s: usize, t: usize) -> TripleFactor {
    match (s, t) {
        (0, o) | (o, 0) => TripleFactor::Point(o),
        (a, b) => TripleFactor::Pair(a.min(b), a.max(b)),
    }
}

/// Exhaustive average of `h(z, Z_a, Z_b, Z_c)` over distinct triples.
fn h1_from_sums(t: &TripleSums) -> f64 {
    use TripleFactor::*;
    let n = t.n;
    let mut total = 0.0;
    for (coef, xs, ys) in kernel_terms() {
        // Sum over ordered distinct (a, b, c) of the product.
        let v = match (triple_factor(xs.0, xs.1), triple_factor(ys.0, ys.1)) {
            (Point(s), Point(r)) if s == r => (n - 1.0) * (n - 2.0) * t.suv,
            (Point(_), Point(_)) => (n - 2.0) * (t.su * t.sv - t.suv),
            (Point(s), Pair(a, b)) => {
                if s == a || s == b {
                    (n - 2.0) * t.su_rb
                } else {
                    t.su * t.gb - 2.0 * t.su_rb
                }
            }
            (Pair(a, b), Point(s)) => {
                if s == a || s == b {
                    (n - 2.0) * t.sv_ra
                } else {
                    t.sv * t.ga - 2.0 * t.sv_ra
                }
            }
            (Pair(a, b), Pair(c, d)) => {
                if (a, b) == (c, d) {
                    (n - 2.0) * t.cross
                } else {
                    t.row_products - t.cross
                }
            }
        };
        total += coef * v;
    }
    total / (24.0 * n * (n - 1.0) * (n - 2.0))
}

/// Inputs of the exhaustive pair average for two evaluation points.
#[derive(Debug, Clone, Copy)]
struct PairSums {
    n: f64,
    /// Distances between the two points.
    a12: f64,
    b12: f64,
    /// `Σ_c u_k[c]`, `Σ_c v_k[c]`
    ra: [f64; 2],
    rb: [f64; 2],
    /// `c[k][l] = Σ_c u_k[c] v_l[c]`
    c: [[f64; 2]; 2],
    /// `Σ_c u_k[c] rb_c`, `Σ_c v_k[c] ra_c`
    ua: [f64; 2],
    vb: [f64; 2],
    ga: f64,
    gb: f64,
    cross: f64,
}

#[derive(Clone, Copy)]
enum PairFactor {
    /// Distance between the two evaluation points.
    Fixed,
    /// Distance from evaluation point `k` to a sample slot.
    Point(usize, usize),
    /// Distance between the two sample slots.
    Sample,
}

fn pair_factor(s: usize, t: usize) -> PairFactor {
    match (s < 2, t < 2) {
        (true, true) => PairFactor::Fixed,
        (true, false) => PairFactor::Point(s, t),
        (false, true) => PairFactor::Point(t, s),
        (false, false) => PairFactor::Sample,
    }
}

/// Exhaustive average of `h(z₁, z₂, Z_a, Z_b)` over distinct pairs.
fn h2_from_sums(t: &PairSums) -> f64 {
    use PairFactor::*;
    let n = t.n;
    let mut total = 0.0;
    for (coef, xs, ys) in kernel_terms() {
        // Sum over ordered a ≠ b of the product.
        let v = match (pair_factor(xs.0, xs.1), pair_factor(ys.0, ys.1)) {
            (Fixed, Fixed) => t.a12 * t.b12 * n * (n - 1.0),
            (Fixed, Point(l, _)) => t.a12 * (n - 1.0) * t.rb[l],
            (Fixed, Sample) => t.a12 * t.gb,
            (Point(k, _), Fixed) => t.b12 * (n - 1.0) * t.ra[k],
            (Point(k, s), Point(l, r)) => {
                if s == r {
                    (n - 1.0) * t.c[k][l]
                } else {
                    t.ra[k] * t.rb[l] - t.c[k][l]
                }
            }
            (Point(k, _), Sample) => t.ua[k],
            (Sample, Fixed) => t.b12 * t.ga,
            (Sample, Point(l, _)) => t.vb[l],
            (Sample, Sample) => t.cross,
        };
        total += coef * v;
    }
    total / (24.0 * n * (n - 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn check_point(point: &Observation<'_>, sample: &PairedSample) -> Result<()> {
    if point.x.len() != sample.p() {
        return Err(DcovError::DimensionMismatch {
            expected: sample.p(),
            found: point.x.len(),
        });
    }
    if point.y.len() != sample.q() {
        return Err(DcovError::DimensionMismatch {
            expected: sample.q(),
            found: point.y.len(),
        });
    }
    if point.x.iter().chain(point.y).any(|v| !v.is_finite()) {
        return Err(DcovError::NonFinite {
            block: "point",
            row: 0,
        });
    }
    Ok(())
}

/// How [`h1_hat`] averages over triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum H1Mode {
    /// All `C(n, 3)` triples.
    Exhaustive,
    /// `triples` uniformly drawn 3-subsets.
    Sampled { triples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct H1Estimate {
    pub value: f64,
    /// 0 in exhaustive mode.
    pub standard_error: f64,
    pub triples: usize,
}

/// Estimate of `h₁(point)`: the kernel averaged over triples of sample
/// observations, with `point` in the first slot.
pub fn h1_hat(point: Observation<'_>, sample: &PairedSample, mode: H1Mode) -> Result<H1Estimate> {
    sample.require(3)?;
    check_point(&point, sample)?;
    let n = sample.n();
    match mode {
        H1Mode::Exhaustive => {
            let dx = pairwise_distances(sample.x())?;
            let dy = pairwise_distances(sample.y())?;
            let agg = Aggregates::of(&dx, &dy);
            let u = distances_to(point.x, sample.x());
            let v = distances_to(point.y, sample.y());
            let sums = TripleSums {
                n: n as f64,
                su: u.iter().sum(),
                sv: v.iter().sum(),
                suv: dot(&u, &v),
                su_rb: dot(&u, &agg.rb),
                sv_ra: dot(&v, &agg.ra),
                ga: agg.ga,
                gb: agg.gb,
                cross: agg.cross,
                row_products: agg.row_products,
            };
            let triples = n * (n - 1) * (n - 2) / 6;
            Ok(H1Estimate {
                value: h1_from_sums(&sums),
                standard_error: 0.0,
                triples,
            })
        }
        H1Mode::Sampled { triples, seed } => {
            if triples == 0 {
                return Err(DcovError::InvalidArgument(
                    "triple budget must be positive".into(),
                ));
            }
            let parts: Vec<(f64, f64)> = blocks(triples)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|(b, range)| {
                    let mut rng = stream_rng(seed, b);
                    let (mut s, mut s2) = (0.0, 0.0);
                    for _ in range {
                        let a = rng.random_range(0..n);
                        let mut b = rng.random_range(0..n - 1);
                        if b >= a {
                            b += 1;
                        }
                        let mut c = rng.random_range(0..n - 2);
                        for lo in [a.min(b), a.max(b)] {
                            if c >= lo {
                                c += 1;
                            }
                        }
                        let z = [
                            point,
                            sample.observation(a),
                            sample.observation(b),
                            sample.observation(c),
                        ];
                        let h = kernel_h(&z).expect("dimensions checked");
                        s += h;
                        s2 += h * h;
                    }
                    (s, s2)
                })
                .collect();
            let (s, s2) = parts
                .iter()
                .fold((0.0, 0.0), |(a, b), &(c, d)| (a + c, b + d));
            let m = triples as f64;
            let mean = s / m;
            let var = if triples > 1 {
                ((s2 - m * mean * mean) / (m - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(H1Estimate {
                value: mean,
                standard_error: (var / m).sqrt(),
                triples,
            })
        }
    }
}

/// Leave-one-out projections: for each index `i`, the exhaustive `h₁`
/// estimate at observation `i` computed from the other `n − 1` observations.
pub fn loo_h1_values(sample: &PairedSample, indices: &[usize]) -> Result<Vec<f64>> {
    sample.require(4)?;
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    Ok(loo_h1_from(&dx, &dy, indices))
}

fn loo_h1_from(dx: &DistanceMatrix, dy: &DistanceMatrix, indices: &[usize]) -> Vec<f64> {
    let agg = Aggregates::of(dx, dy);
    indices
        .par_iter()
        .map(|&i| {
            let (ai, bi) = (dx.row(i), dy.row(i));
            let cii = dot(ai, bi);
            let a_rb = dot(ai, &agg.rb);
            let b_ra = dot(bi, &agg.ra);
            let sums = TripleSums {
                n: (agg.n - 1) as f64,
                su: agg.ra[i],
                sv: agg.rb[i],
                suv: cii,
                su_rb: a_rb - cii,
                sv_ra: b_ra - cii,
                ga: agg.ga - 2.0 * agg.ra[i],
                gb: agg.gb - 2.0 * agg.rb[i],
                cross: agg.cross - 2.0 * cii,
                row_products: agg.row_products - agg.ra[i] * agg.rb[i] - a_rb - b_ra + cii,
            };
            h1_from_sums(&sums)
        })
        .collect()
}

/// `min(budget, n)` distinct indices drawn without replacement, ascending.
fn choose_indices(n: usize, budget: usize, seed: u64) -> Vec<usize> {
    let k = budget.min(n);
    let mut rng = stream_rng(seed, 0);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort_unstable();
    out
}

/// Sample variance of leave-one-out `h₁` estimates at `eval_budget`
/// randomly chosen observations (all of them if the budget is at least `n`).
pub fn var_h1_hat(sample: &PairedSample, eval_budget: usize, seed: u64) -> Result<f64> {
    sample.require(10)?;
    if eval_budget < 2 {
        return Err(DcovError::InvalidArgument(
            "need at least two evaluation points".into(),
        ));
    }
    let idx = choose_indices(sample.n(), eval_budget, seed);
    let vals = loo_h1_values(sample, &idx)?;
    Ok(crate::stats::variance(&vals))
}

/// Estimate of `h₂(point1, point2)`: the kernel averaged over pairs of
/// sample observations, with the two points in the first two slots.
///
/// Builds the sample's distance matrices on every call; use
/// [`H2Evaluator`] for repeated evaluations against one sample.
pub fn h2_hat(
    point1: Observation<'_>,
    point2: Observation<'_>,
    sample: &PairedSample,
) -> Result<f64> {
    H2Evaluator::new(sample)?.eval(point1, point2)
}

/// [`h2_hat`] against a fixed sample, `O(n)` per evaluation.
#[derive(Debug, Clone)]
pub struct H2Evaluator<'a> {
    sample: &'a PairedSample,
    agg: Aggregates,
}

impl<'a> H2Evaluator<'a> {
    pub fn new(sample: &'a PairedSample) -> Result<Self> {
        sample.require(2)?;
        let dx = pairwise_distances(sample.x())?;
        let dy = pairwise_distances(sample.y())?;
        Ok(Self {
            sample,
            agg: Aggregates::of(&dx, &dy),
        })
    }

    pub fn eval(&self, point1: Observation<'_>, point2: Observation<'_>) -> Result<f64> {
        let sample = self.sample;
        check_point(&point1, sample)?;
        check_point(&point2, sample)?;
        // A fixed argument order makes the result exactly symmetric.
        let key = |o: &Observation<'_>| {
            o.x.iter()
                .chain(o.y)
                .map(|v| OrdKey(*v))
                .collect::<Vec<_>>()
        };
        let (point1, point2) = if key(&point2) < key(&point1) {
            (point2, point1)
        } else {
            (point1, point2)
        };
        let agg = &self.agg;
        let u = [
            distances_to(point1.x, sample.x()),
            distances_to(point2.x, sample.x()),
        ];
        let v = [
            distances_to(point1.y, sample.y()),
            distances_to(point2.y, sample.y()),
        ];
        let sums = PairSums {
            n: sample.n() as f64,
            a12: crate::distances::euclidean(point1.x, point2.x),
            b12: crate::distances::euclidean(point1.y, point2.y),
            ra: [u[0].iter().sum(), u[1].iter().sum()],
            rb: [v[0].iter().sum(), v[1].iter().sum()],
            c: [
                [dot(&u[0], &v[0]), dot(&u[0], &v[1])],
                [dot(&u[1], &v[0]), dot(&u[1], &v[1])],
            ],
            ua: [dot(&u[0], &agg.rb), dot(&u[1], &agg.rb)],
            vb: [dot(&v[0], &agg.ra), dot(&v[1], &agg.ra)],
            ga: agg.ga,
            gb: agg.gb,
            cross: agg.cross,
        };
        Ok(h2_from_sums(&sums))
    }
}

/// Total order on finite floats, for canonical argument ordering.
struct OrdKey(f64);

impl PartialEq for OrdKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrdKey {}

impl PartialOrd for OrdKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// `h₂` estimates between every pair of the given sample observations.
fn h2_matrix(dx: &DistanceMatrix, dy: &DistanceMatrix, basis: &[usize]) -> DMatrix<f64> {
    let n = dx.n();
    let m = basis.len();
    let agg = Aggregates::of(dx, dy);
    let u = DMatrix::from_fn(m, n, |r, c| dx.get(basis[r], c));
    let v = DMatrix::from_fn(m, n, |r, c| dy.get(basis[r], c));
    // cross[(α, β)] = Σ_c a(α, c) b(β, c)
    let cross = &u * v.transpose();
    let ua: Vec<f64> = basis.iter().map(|&i| dot(dx.row(i), &agg.rb)).collect();
    let vb: Vec<f64> = basis.iter().map(|&i| dot(dy.row(i), &agg.ra)).collect();
    DMatrix::from_fn(m, m, |r, c| {
        let (i, j) = (basis[r], basis[c]);
        let sums = PairSums {
            n: n as f64,
            a12: dx.get(i, j),
            b12: dy.get(i, j),
            ra: [agg.ra[i], agg.ra[j]],
            rb: [agg.rb[i], agg.rb[j]],
            c: [
                [cross[(r, r)], cross[(r, c)]],
                [cross[(c, r)], cross[(c, c)]],
            ],
            ua: [ua[r], ua[c]],
            vb: [vb[r], vb[c]],
            ga: agg.ga,
            gb: agg.gb,
            cross: agg.cross,
        };
        h2_from_sums(&sums)
    })
}

/// Monte Carlo estimate of `Var h₂(Z₁, Z₂)`: the sample variance of `h₂`
/// estimates over `pairs` disjoint pairs of distinct observations.
pub fn var_h2_hat(sample: &PairedSample, pairs: usize, seed: u64) -> Result<f64> {
    sample.require(4)?;
    if pairs < 2 || 2 * pairs > sample.n() {
        return Err(DcovError::InvalidArgument(format!(
            "need 2 ≤ pairs ≤ n/2, got {pairs} for n = {}",
            sample.n()
        )));
    }
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    let mut rng = stream_rng(seed, 0);
    let perm = crate::rng::random_permutation(&mut rng, sample.n());
    let chosen = &perm[..2 * pairs];
    let agg = Aggregates::of(&dx, &dy);
    let vals: Vec<f64> = chosen
        .chunks_exact(2)
        .map(|w| {
            let (i, j) = (w[0], w[1]);
            let (ai, aj, bi, bj) = (dx.row(i), dx.row(j), dy.row(i), dy.row(j));
            let sums = PairSums {
                n: dx.n() as f64,
                a12: dx.get(i, j),
                b12: dy.get(i, j),
                ra: [agg.ra[i], agg.ra[j]],
                rb: [agg.rb[i], agg.rb[j]],
                c: [[dot(ai, bi), dot(ai, bj)], [dot(aj, bi), dot(aj, bj)]],
                ua: [dot(ai, &agg.rb), dot(aj, &agg.rb)],
                vb: [dot(bi, &agg.ra), dot(bj, &agg.ra)],
                ga: agg.ga,
                gb: agg.gb,
                cross: agg.cross,
            };
            h2_from_sums(&sums)
        })
        .collect();
    Ok(crate::stats::variance(&vals))
}

/// Eigenvalues of the empirical `h₂` operator, largest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSpectrum {
    eigenvalues: Vec<f64>,
    n_basis: usize,
}

impl LimitSpectrum {
    /// Sorts the values into nonincreasing order.
    pub fn new(mut eigenvalues: Vec<f64>, n_basis: usize) -> Result<Self> {
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(DcovError::InvalidArgument("non-finite eigenvalue".into()));
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            eigenvalues,
            n_basis,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Variance `72 Σ λ_i²` of the limit law `6 Σ λ_i (Z_i² − 1)`.
    pub fn limit_variance(&self) -> f64 {
        72.0 * self.eigenvalues.iter().map(|l| l * l).sum::<f64>()
    }

    /// Share of [`Self::limit_variance`] carried by eigenvalues past the first `k`.
    pub fn tail_fraction(&self, k: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|l| l * l).sum();
        if total == 0.0 {
            return 0.0;
        }
        self.eigenvalues.iter().skip(k).map(|l| l * l).sum::<f64>() / total
    }
}

/// Spectrum of the `h₂` integral operator estimated from `basis_size`
/// observations drawn without replacement: eigenvalues of the symmetrized
/// matrix `[h₂(z_a, z_b)] / basis_size`.
pub fn h2_spectrum(sample: &PairedSample, basis_size: usize, seed: u64) -> Result<LimitSpectrum> {
    if basis_size < 2 || basis_size > sample.n() {
        return Err(DcovError::InvalidArgument(format!(
            "basis size must lie in [2, {}], got {basis_size}",
            sample.n()
        )));
    }
    sample.require(4)?;
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    spectrum_from(&dx, &dy, basis_size, seed)
}

pub(crate) fn spectrum_from(
    dx: &DistanceMatrix,
    dy: &DistanceMatrix,
    basis_size: usize,
    seed: u64,
) -> Result<LimitSpectrum> {
    let basis = choose_indices(dx.n(), basis_size, seed);
    let m = h2_matrix(dx, dy, &basis);
    let sym = (&m + m.transpose()) * (0.5 / basis_size as f64);
    let eig = SymmetricEigen::new(sym);
    LimitSpectrum::new(eig.eigenvalues.iter().copied().collect(), basis_size)
}

/// `reps` independent draws of `6 Σ λ_i (Z_i² − 1)`.
pub fn sample_degenerate_limit(
    spectrum: &LimitSpectrum,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(DcovError::InvalidArgument("empty spectrum".into()));
    }
    if reps == 0 {
        return Err(DcovError::InvalidArgument("need at least one draw".into()));
    }
    let lambdas = spectrum.eigenvalues();
    Ok(draw_blocks(reps, seed, |rng| {
        let s: f64 = lambdas
            .iter()
            .map(|&l| {
                let z: f64 = rng.sample(StandardNormal);
                l * (z * z - 1.0)
            })
            .sum();
        6.0 * s
    }))
}

/// `reps` draws from `N(0, 16 · variance_h1)`.
pub fn sample_normal_limit(variance_h1: f64, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if !(variance_h1 >= 0.0 && variance_h1.is_finite()) {
        return Err(DcovError::Domain(format!(
            "variance must be finite and nonnegative, got {variance_h1}"
        )));
    }
    if reps == 0 {
        return Err(DcovError::InvalidArgument("need at least one draw".into()));
    }
    let sd = 4.0 * variance_h1.sqrt();
    Ok(draw_blocks(reps, seed, |rng| {
        let z: f64 = rng.sample(StandardNormal);
        sd * z
    }))
}

fn draw_blocks<F>(reps: usize, seed: u64, draw: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks: Vec<Vec<f64>> = blocks(reps)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(b, range)| {
            let mut rng = stream_rng(seed, b);
            range.map(|_| draw(&mut rng)).collect()
        })
        .collect();
    chunks.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::dcov_usq;
    use crate::sample::Block;
    use rand_distr::Distribution;

    fn normal(seed: u64, n: usize, d: usize) -> Block {
        let mut rng = stream_rng(seed, 9);
        let v: Vec<f64> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Block::from_vec(n, d, v).unwrap()
    }

    fn brute_h1(point: Observation<'_>, s: &PairedSample) -> f64 {
        let n = s.n();
        let (mut sum, mut cnt) = (0.0, 0.0);
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let z = [point, s.observation(a), s.observation(b), s.observation(c)];
                    sum += kernel_h(&z).unwrap();
                    cnt += 1.0;
                }
            }
        }
        sum / cnt
    }

    fn brute_h2(p1: Observation<'_>, p2: Observation<'_>, s: &PairedSample) -> f64 {
        let n = s.n();
        let (mut sum, mut cnt) = (0.0, 0.0);
        for a in 0..n {
            for b in a + 1..n {
                sum += kernel_h(&[p1, p2, s.observation(a), s.observation(b)]).unwrap();
                cnt += 1.0;
            }
        }
        sum / cnt
    }

    fn dependent(seed: u64, n: usize) -> PairedSample {
        let x = normal(seed, n, 2);
        let noise = normal(seed + 1, n, 1);
        let y: Vec<f64> = (0..n)
            .map(|i| x.row(i)[0] * x.row(i)[1] + 0.3 * noise.row(i)[0])
            .collect();
        PairedSample::new(x, Block::column(&y)).unwrap()
    }

    #[test]
    fn h1_matches_triple_enumeration() {
        let s = dependent(1, 9);
        let px = [0.4, -1.1];
        let py = [0.7];
        let p = Observation::new(&px, &py);
        let fast = h1_hat(p, &s, H1Mode::Exhaustive).unwrap();
        assert!((fast.value - brute_h1(p, &s)).abs() < 1e-12);
        assert_eq!(fast.triples, 84);
        // A point already in the sample.
        let p = s.observation(3);
        let v = h1_hat(p, &s, H1Mode::Exhaustive).unwrap().value;
        assert!((v - brute_h1(p, &s)).abs() < 1e-12);
    }

    #[test]
    fn h1_single_triple() {
        let s = PairedSample::from_columns(&[0.0, 1.0, 3.0], &[1.0, -1.0, 2.0]).unwrap();
        let p = s.observation(1);
        let h = kernel_h(&[p, s.observation(0), s.observation(1), s.observation(2)]).unwrap();
        assert!((h1_hat(p, &s, H1Mode::Exhaustive).unwrap().value - h).abs() < 1e-14);
    }

    #[test]
    fn h1_zero_for_constant_y() {
        let s = PairedSample::new(normal(2, 15, 1), Block::column(&[1.0; 15])).unwrap();
        let px = [0.3];
        let py = [5.0];
        let v = h1_hat(Observation::new(&px, &py), &s, H1Mode::Exhaustive).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn h1_sampled_agrees_with_exhaustive() {
        let s = dependent(3, 40);
        let p = s.observation(0);
        let exact = h1_hat(p, &s, H1Mode::Exhaustive).unwrap().value;
        let est = h1_hat(
            p,
            &s,
            H1Mode::Sampled {
                triples: 20_000,
                seed: 4,
            },
        )
        .unwrap();
        assert!(
            (est.value - exact).abs() <= 4.0 * est.standard_error,
            "{est:?} vs {exact}"
        );
        assert!(h1_hat(
            p,
            &s,
            H1Mode::Sampled {
                triples: 0,
                seed: 4
            }
        )
        .is_err());
    }

    #[test]
    fn h1_errors() {
        let s = PairedSample::from_columns(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        let p = s.observation(0);
        assert!(matches!(
            h1_hat(p, &s, H1Mode::Exhaustive),
            Err(DcovError::SampleTooSmall { .. })
        ));
        let s = dependent(1, 9);
        let bad = Observation::new(&[1.0], &[1.0]);
        assert!(matches!(
            h1_hat(bad, &s, H1Mode::Exhaustive),
            Err(DcovError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn loo_matches_explicit_removal() {
        let s = dependent(5, 12);
        let idx: Vec<usize> = (0..12).collect();
        let loo = loo_h1_values(&s, &idx).unwrap();
        for i in [0usize, 5, 11] {
            let rest: Vec<usize> = (0..12).filter(|&j| j != i).collect();
            let reduced = s.select(&rest);
            let direct = brute_h1(s.observation(i), &reduced);
            assert!(
                (loo[i] - direct).abs() < 1e-12,
                "{i}: {} vs {direct}",
                loo[i]
            );
        }
        // Each 4-subset is counted once per member, so the mean is the U-statistic.
        let mean = loo.iter().sum::<f64>() / 12.0;
        assert!((mean - dcov_usq(&s).unwrap().value).abs() < 1e-12);
    }

    #[test]
    fn h2_matches_pair_enumeration() {
        let s = dependent(6, 10);
        let (ax, ay) = ([0.1, 0.9], [-0.4]);
        let (bx, by) = ([1.5, -0.3], [0.8]);
        let p1 = Observation::new(&ax, &ay);
        let p2 = Observation::new(&bx, &by);
        let v = h2_hat(p1, p2, &s).unwrap();
        assert!((v - brute_h2(p1, p2, &s)).abs() < 1e-12);
        assert_eq!(v, h2_hat(p2, p1, &s).unwrap());
    }

    #[test]
    fn h2_same_x_part_regression() {
        let s = dependent(7, 8);
        let (x, y1, y2) = ([0.25, -0.5], [0.1], [0.9]);
        let v = h2_hat(Observation::new(&x, &y1), Observation::new(&x, &y2), &s).unwrap();
        let oracle = brute_h2(Observation::new(&x, &y1), Observation::new(&x, &y2), &s);
        assert!((v - oracle).abs() < 1e-12);
        assert_eq!(v, -3.816_105_671_469_717_5e-2);
    }

    #[test]
    fn h1_vanishes_under_independence() {
        let s = PairedSample::new(normal(20, 200, 1), normal(21, 200, 1)).unwrap();
        let points = PairedSample::new(normal(22, 50, 1), normal(23, 50, 1)).unwrap();
        let vals: Vec<f64> = (0..50)
            .map(|i| {
                h1_hat(points.observation(i), &s, H1Mode::Exhaustive)
                    .unwrap()
                    .value
            })
            .collect();
        let se = (crate::stats::variance(&vals) / 50.0).sqrt();
        assert!(crate::stats::mean(&vals).abs() <= 3.0 * se);
    }

    #[test]
    fn spectrum_energy_matches_distance_variances() {
        // The diagonal h₂(z, z) adds O(1/basis) to Σλ²; at basis 100 that
        // alone is about a third of the target, so use a larger basis.
        let s = PairedSample::new(normal(30, 2000, 1), normal(31, 2000, 1)).unwrap();
        let sp = h2_spectrum(&s, 400, 2).unwrap();
        let energy = 36.0 * sp.eigenvalues().iter().map(|l| l * l).sum::<f64>();
        let dx = pairwise_distances(s.x()).unwrap();
        let dy = pairwise_distances(s.y()).unwrap();
        let rhs =
            crate::estimators::dvar_usq(&dx).unwrap() * crate::estimators::dvar_usq(&dy).unwrap();
        assert!((energy - rhs).abs() <= 0.25 * rhs, "{energy} vs {rhs}");
    }

    #[test]
    fn h2_zero_for_constant_y() {
        let s = PairedSample::new(normal(8, 10, 1), Block::column(&[2.0; 10])).unwrap();
        let v = h2_hat(
            Observation::new(&[0.0], &[2.0]),
            Observation::new(&[1.0], &[2.0]),
            &s,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn h2_matrix_agrees_with_pointwise() {
        let s = dependent(9, 14);
        let dx = pairwise_distances(s.x()).unwrap();
        let dy = pairwise_distances(s.y()).unwrap();
        let basis = [0usize, 3, 7, 13];
        let m = h2_matrix(&dx, &dy, &basis);
        for (r, &i) in basis.iter().enumerate() {
            for (c, &j) in basis.iter().enumerate() {
                let direct = brute_h2(s.observation(i), s.observation(j), &s);
                assert!((m[(r, c)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_sorted_and_zero_for_constant_y() {
        let s = dependent(10, 60);
        let sp = h2_spectrum(&s, 30, 1).unwrap();
        assert_eq!(sp.len(), 30);
        assert!(sp.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        let c = PairedSample::new(normal(11, 20, 1), Block::column(&[0.0; 20])).unwrap();
        let sp = h2_spectrum(&c, 10, 1).unwrap();
        assert!(sp.eigenvalues().iter().all(|&l| l == 0.0));
        assert!(h2_spectrum(&c, 1, 1).is_err());
        assert!(h2_spectrum(&c, 21, 1).is_err());
    }

    #[test]
    fn var_h1_examples() {
        let c = PairedSample::new(Block::column(&[1.0; 20]), Block::column(&[2.0; 20])).unwrap();
        assert_eq!(var_h1_hat(&c, 20, 0).unwrap(), 0.0);
        let small = PairedSample::new(normal(1, 9, 1), normal(2, 9, 1)).unwrap();
        assert!(var_h1_hat(&small, 9, 0).is_err());

        let x = normal(12, 300, 1);
        let s = PairedSample::new(x.clone(), x).unwrap();
        let a = var_h1_hat(&s, 150, 1).unwrap();
        let b = var_h1_hat(&s, 150, 2).unwrap();
        assert!(a > 0.0 && b > 0.0);
        assert!((a - b).abs() <= 0.2 * a.max(b), "{a} vs {b}");
    }

    #[test]
    fn var_h1_shrinks_under_independence() {
        let v = |n: usize, seed: u64| {
            let s = PairedSample::new(normal(seed, n, 1), normal(seed + 500, n, 1)).unwrap();
            var_h1_hat(&s, n, seed).unwrap()
        };
        let small: f64 = (0..5).map(|k| v(100, k)).sum();
        let large: f64 = (0..5).map(|k| v(400, k + 10)).sum();
        assert!(large < small, "{large} !< {small}");
    }

    #[test]
    fn degenerate_limit_draws() {
        let zero = LimitSpectrum::new(vec![0.0; 5], 5).unwrap();
        assert!(sample_degenerate_limit(&zero, 100, 1)
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));

        let one = LimitSpectrum::new(vec![1.0], 1).unwrap();
        let d = sample_degenerate_limit(&one, 100_000, 2).unwrap();
        let (m, v) = (crate::stats::mean(&d), crate::stats::variance(&d));
        assert!(m.abs() <= 3.0 * (v / d.len() as f64).sqrt());
        assert!((v - 72.0).abs() <= 0.05 * 72.0, "{v}");

        let two = LimitSpectrum::new(vec![1.0, 2.0], 2).unwrap();
        assert_eq!(two.eigenvalues(), &[2.0, 1.0]);
        let d = sample_degenerate_limit(&two, 100_000, 3).unwrap();
        assert!((crate::stats::variance(&d) - 360.0).abs() <= 0.05 * 360.0);
        assert_eq!(two.limit_variance(), 360.0);

        let empty = LimitSpectrum::new(vec![], 0).unwrap();
        assert!(sample_degenerate_limit(&empty, 10, 1).is_err());
        assert_eq!(d, sample_degenerate_limit(&two, 100_000, 3).unwrap());
    }

    #[test]
    fn normal_limit_draws() {
        assert!(sample_normal_limit(0.0, 50, 1)
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));
        let d = sample_normal_limit(1.0, 100_000, 2).unwrap();
        assert!((crate::stats::variance(&d) - 16.0).abs() <= 0.05 * 16.0);
        let d = sample_normal_limit(0.25, 100_000, 3).unwrap();
        assert!((crate::stats::variance(&d) - 4.0).abs() <= 0.05 * 4.0);
        assert!(sample_normal_limit(-1.0, 10, 1).is_err());
    }

    #[test]
    fn h1_averages_to_the_u_statistic_on_dependent_data() {
        let s = dependent(13, 200);
        let idx: Vec<usize> = (0..200).collect();
        let loo = loo_h1_values(&s, &idx).unwrap();
        let mean = crate::stats::mean(&loo);
        let omega = dcov_usq(&s).unwrap().value;
        assert!((mean - omega).abs() <= 0.1 * omega.abs().max(0.01));
    }

    #[test]
    fn h2_never_nan() {
        let s = PairedSample::new(Block::column(&[0.0, 0.0]), Block::column(&[1.0, 1.0])).unwrap();
        let p = Observation::new(&[0.0], &[1.0]);
        assert!(h2_hat(p, p, &s).unwrap().is_finite());
    }
}
