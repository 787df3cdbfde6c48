//! Fixtures shared by the benchmarks.

use dcov_core::{generate, PairedSample, Shape, ShapeSpec};

/// A noisy circle of `n` points, fixed per `(n, seed)`.
pub fn circle(n: usize, seed: u64) -> PairedSample {
    generate(&ShapeSpec::new(Shape::Circle, n, 0.05, seed).expect("valid spec"))
        .expect("generated sample")
}

/// Independent standard normal blocks of dimensions `p` and `q`.
pub fn independent(n: usize, p: usize, q: usize, seed: u64) -> PairedSample {
    generate(&ShapeSpec::new(Shape::Independent { p, q }, n, 0.0, seed).expect("valid spec"))
        .expect("generated sample")
}
