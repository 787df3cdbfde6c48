//! Seeded synthetic samples: nonlinear shapes with zero covariance,
//! correlated Gaussians and independent noise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{DcovError, Result};
use crate::rng::stream_rng;
use crate::sample::{Block, PairedSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// `(cos θ, sin θ)`, θ uniform on `[0, 2π)`.
    Circle,
    /// `(U, cos 4πU)`, U uniform on `[0, 1]`.
    Wave,
    /// `(S·V, S′·V)`, V uniform on `[0, 1]`, S and S′ independent signs.
    Cross,
    /// Standard bivariate normal with correlation `rho`.
    Linear { rho: f64 },
    /// Independent standard normal blocks of dimensions `p` and `q`.
    Independent { p: usize, q: usize },
}

impl Shape {
    pub fn tag(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Wave => "wave",
            Shape::Cross => "cross",
            Shape::Linear { .. } => "linear",
            Shape::Independent { .. } => "independent",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Shape {
    type Err = DcovError;

    /// Parses a bare tag; `linear` defaults to `rho = 0.5` and
    /// `independent` to scalar blocks.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Shape::Circle),
            "wave" => Ok(Shape::Wave),
            "cross" => Ok(Shape::Cross),
            "linear" => Ok(Shape::Linear { rho: 0.5 }),
            "independent" => Ok(Shape::Independent { p: 1, q: 1 }),
            _ => Err(DcovError::UnknownTag {
                kind: "shape",
                tag: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub shape: Shape,
    pub n: usize,
    /// Standard deviation of Gaussian noise added to every coordinate.
    pub noise_sd: f64,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(shape: Shape, n: usize, noise_sd: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            shape,
            n,
            noise_sd,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(DcovError::InvalidArgument("n must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(DcovError::InvalidArgument(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        match self.shape {
            Shape::Linear { rho } if !(-1.0..=1.0).contains(&rho) => Err(
                DcovError::InvalidArgument(format!("rho must lie in [-1, 1], got {rho}")),
            ),
            Shape::Independent { p, q } if p == 0 || q == 0 => Err(DcovError::InvalidArgument(
                "block dimensions must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn sign<R: Rng>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Draws the sample described by `spec`.
pub fn generate(spec: &ShapeSpec) -> Result<PairedSample> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let (p, q) = match spec.shape {
        Shape::Independent { p, q } => (p, q),
        _ => (1, 1),
    };
    let mut x = Vec::with_capacity(spec.n * p);
    let mut y = Vec::with_capacity(spec.n * q);
    for _ in 0..spec.n {
        match spec.shape {
            Shape::Circle => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                x.push(theta.cos());
                y.push(theta.sin());
            }
            Shape::Wave => {
                let u: f64 = rng.random();
                x.push(u);
                y.push((4.0 * std::f64::consts::PI * u).cos());
            }
            Shape::Cross => {
                let v: f64 = rng.random();
                x.push(sign(&mut rng) * v);
                y.push(sign(&mut rng) * v);
            }
            Shape::Linear { rho } => {
                let u: f64 = StandardNormal.sample(&mut rng);
                let w: f64 = StandardNormal.sample(&mut rng);
                x.push(u);
                y.push(rho * u + (1.0 - rho * rho).sqrt() * w);
            }
            Shape::Independent { .. } => {
                x.extend((0..p).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                y.extend((0..q).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            }
        }
    }
    if spec.noise_sd > 0.0 {
        let mut noise = stream_rng(spec.seed, 1);
        for v in x.iter_mut().chain(y.iter_mut()) {
            let e: f64 = StandardNormal.sample(&mut noise);
            *v += spec.noise_sd * e;
        }
    }
    PairedSample::new(
        Block::from_vec(spec.n, p, x)?,
        Block::from_vec(spec.n, q, y)?,
    )
}
