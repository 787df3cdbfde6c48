//! Distance covariance and distance correlation: the defining constant and
//! integral, unbiased estimators, Hoeffding projections and limit laws,
//! permutation and asymptotic independence tests, and synthetic data.

pub mod datagen;
pub mod distances;
pub mod error;
pub mod estimators;
pub mod fundamental;
pub mod inference;
pub mod io;
mod numeric;
pub mod rng;
pub mod sample;
pub mod stats;
pub mod ustat_theory;

pub use datagen::{generate, Shape, ShapeSpec};
pub use distances::{pairwise_distances, DistanceMatrix};
pub use error::{DcovError, Result};
pub use estimators::{
    classical_cov_stat, dcor_sq, dcor_sq_from, dcov_usq, dcov_usq_fast, dcov_usq_naive,
    dcov_usq_streaming, dvar_usq, kernel_h, DCovEstimate, EstimatorKind,
};
pub use fundamental::{
    dcov_sq_cf_mc, fundamental_constant, generalized_constant, truncated_cos,
    verify_fundamental_integral, GeneralizedConstant, IntegralBudget, IntegralCheck,
};
pub use inference::{
    asymptotic_test, p_value_from, permutation_replicates, permutation_test, Method,
    PermutationDraws, Statistic, TestReport,
};
pub use io::{read_csv, to_json, write_csv, ColumnRef, ColumnSpec, CsvMode};
pub use rng::{derive_seed, stream_rng, with_threads, REPLICATE_BLOCK};
pub use sample::{Block, Observation, PairedSample};
pub use ustat_theory::{
    h1_hat, h2_hat, h2_spectrum, loo_h1_values, sample_degenerate_limit, sample_normal_limit,
    var_h1_hat, var_h2_hat, H1Estimate, H1Mode, H2Evaluator, LimitSpectrum,
};
