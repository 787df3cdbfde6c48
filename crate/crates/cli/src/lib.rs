//! The `dcov` command line: estimation, independence tests, limit-law
//! simulation, integral checks and synthetic data.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dcov_core::stats::{ks_distance, mean, quantile_sorted, sorted, variance};
use dcov_core::{
    asymptotic_test, dcor_sq_from, dcov_usq_fast, dcov_usq_naive, dcov_usq_streaming, derive_seed,
    generate, h2_spectrum, pairwise_distances, permutation_test, read_csv, sample_degenerate_limit,
    sample_normal_limit, var_h1_hat, verify_fundamental_integral, with_threads, Block, ColumnSpec,
    CsvMode, DcovError, IntegralBudget, IntegralCheck, PairedSample, Shape, ShapeSpec, Statistic,
};

const NAIVE_CAP: usize = 200;

#[derive(Parser, Debug)]
#[command(
    name = "dcov",
    version,
    about = "Distance covariance estimation and independence testing"
)]
struct Cli {
    /// Worker threads for permutation and Monte Carlo loops (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Unbiased squared distance covariance of two column groups.
    Estimate(EstimateArgs),
    /// Permutation test of independence.
    Test(TestArgs),
    /// Test of independence against the degenerate limit law.
    Asymptest(AsymptestArgs),
    /// Compare simulated statistics with their limit laws.
    SimulateLimits(SimulateArgs),
    /// Check the fundamental integral numerically.
    VerifyIntegral(IntegralArgs),
    /// Write a synthetic sample as CSV.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// CSV file to read.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// X columns: comma-separated 0-based indices or header names.
    #[arg(long, value_name = "COLS")]
    x: String,
    /// Y columns: comma-separated 0-based indices or header names.
    #[arg(long, value_name = "COLS")]
    y: String,
    /// The first row is a header (default: detected).
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    /// The first row is data.
    #[arg(long)]
    no_header: bool,
    /// Drop rows with missing or non-numeric values instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Use only the first N rows.
    #[arg(long, value_name = "N")]
    rows: Option<usize>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Write output here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Use the O(n⁴) kernel average.
    #[arg(long)]
    naive: bool,
    /// Allow the naive estimator above n = 200.
    #[arg(long)]
    force: bool,
    /// Also report the squared distance correlation.
    #[arg(long)]
    dcor: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// dcov-fast, dcov-naive or classical-cov.
    #[arg(long, default_value = "dcov-fast", value_parser = parse_statistic)]
    stat: Statistic,
    /// Number of permutations.
    #[arg(long = "B", default_value_t = 10_000)]
    permutations: usize,
    /// Allow dcov-naive above n = 200.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct AsymptestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Observations used to estimate the null spectrum.
    #[arg(long, default_value_t = 200)]
    basis: usize,
    /// Draws from the limit law.
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Regime {
    /// Independent normals: n·Ω̂ against 6 Σ λ_i (Z_i² − 1).
    Degenerate,
    /// Y = X + noise: √n (Ω̂ − V²) against N(0, 16 Var h₁).
    Normal,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "degenerate")]
    regime: Regime,
    /// Sample size of each simulated statistic.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Number of simulated statistics.
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Number of limit-law draws.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    /// X and Y dimensions in the degenerate regime.
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Degenerate regime: sample size and basis of the spectrum estimate.
    #[arg(long, default_value_t = 500)]
    spectrum_n: usize,
    #[arg(long, default_value_t = 200)]
    basis: usize,
    /// Normal regime: noise scale, reference and variance sample sizes.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 20_000)]
    ref_n: usize,
    #[arg(long, default_value_t = 2000)]
    var_n: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct IntegralArgs {
    /// Dimension.
    #[arg(long)]
    p: usize,
    /// Point x: p comma-separated components, or one value placed on the first axis.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    /// Absolute tolerance for quadrature (p = 1).
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Importance samples (p ≥ 2, or p = 1 with --mc).
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// Use Monte Carlo even for p = 1.
    #[arg(long)]
    mc: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// circle, wave, cross, linear or independent.
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    #[arg(long)]
    n: usize,
    /// Standard deviation of Gaussian noise on every coordinate.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Correlation for the linear shape.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    rho: f64,
    /// Block dimensions for the independent shape.
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_statistic(s: &str) -> Result<Statistic, String> {
    s.parse().map_err(|e: DcovError| e.to_string())
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    s.parse().map_err(|e: DcovError| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(DcovError),
}

impl From<DcovError> for CliError {
    fn from(e: DcovError) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// JSON body plus a wall-clock timestamp, serialized last.
#[derive(Serialize)]
struct Stamped<T: Serialize> {
    #[serde(flatten)]
    body: T,
    timestamp: String,
}

fn json<T: Serialize>(body: T) -> CliResult<Vec<u8>> {
    let stamped = Stamped {
        body,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let mut s = serde_json::to_string_pretty(&stamped).map_err(DcovError::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Whether the first line of a CSV file looks like a header: some field is
/// not a number.
fn detect_header(path: &Path) -> CliResult<bool> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(first.split(',').any(|f| f.trim().parse::<f64>().is_err()))
}

fn load(input: &InputArgs) -> CliResult<PairedSample> {
    let spec = ColumnSpec::parse(&input.x, &input.y).map_err(|e| CliError::Usage(e.to_string()))?;
    let header = if input.header {
        true
    } else if input.no_header {
        false
    } else {
        detect_header(&input.input)?
    };
    let mode = if input.lenient {
        CsvMode::Lenient
    } else {
        CsvMode::Strict
    };
    let sample = read_csv(&input.input, &spec, header, mode)?;
    match input.rows {
        Some(0) => usage("--rows must be positive"),
        Some(n) => Ok(sample.truncated(n)?),
        None => Ok(sample),
    }
}

#[derive(Serialize)]
struct EstimateOutput {
    method: &'static str,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dcor_sq: Option<f64>,
    n: usize,
    p: usize,
    q: usize,
    seed: u64,
    runtime_ms: u64,
}

fn estimate(a: &EstimateArgs) -> CliResult<Vec<u8>> {
    let start = Instant::now();
    let sample = load(&a.input)?;
    if a.naive && sample.n() > NAIVE_CAP && !a.force {
        return usage(format!(
            "the naive estimator is O(n⁴); n = {} exceeds {NAIVE_CAP} (pass --force to run anyway)",
            sample.n()
        ));
    }
    let dx = pairwise_distances(sample.x())?;
    let dy = pairwise_distances(sample.y())?;
    let est = if a.naive {
        dcov_usq_naive(&sample)?
    } else {
        dcov_usq_fast(&dx, &dy)?
    };
    let dcor_sq = if a.dcor {
        Some(dcor_sq_from(&dx, &dy)?)
    } else {
        None
    };
    json(EstimateOutput {
        method: est.kind.as_str(),
        value: est.value,
        dcor_sq,
        n: est.n,
        p: est.p,
        q: est.q,
        seed: a.out.seed,
        runtime_ms: elapsed_ms(start),
    })
}

fn test(a: &TestArgs) -> CliResult<Vec<u8>> {
    if a.permutations == 0 {
        return usage("--B must be at least 1");
    }
    let sample = load(&a.input)?;
    if a.stat == Statistic::DcovNaive && sample.n() > NAIVE_CAP && !a.force {
        return usage(format!(
            "dcov-naive is O(n⁴) per permutation; n = {} exceeds {NAIVE_CAP} (pass --force to run anyway)",
            sample.n()
        ));
    }
    json(permutation_test(
        &sample,
        a.stat,
        a.permutations,
        a.out.seed,
    )?)
}

fn asymptest(a: &AsymptestArgs) -> CliResult<Vec<u8>> {
    if a.reps == 0 || a.basis < 2 {
        return usage("--reps must be positive and --basis at least 2");
    }
    let sample = load(&a.input)?;
    json(asymptotic_test(&sample, a.basis, a.reps, a.out.seed)?)
}

#[derive(Serialize)]
struct QuantileRow {
    prob: f64,
    empirical: f64,
    limit: f64,
}

#[derive(Serialize)]
struct SimulationOutput {
    regime: Regime,
    /// What was simulated: `n·Ω̂` or `√n (Ω̂ − V²_ref)`.
    statistic: &'static str,
    n: usize,
    reps: usize,
    draws: usize,
    ks_distance: f64,
    empirical_mean: f64,
    empirical_variance: f64,
    limit_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v2_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_h1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_fraction: Option<f64>,
    quantiles: Vec<QuantileRow>,
    seed: u64,
    runtime_ms: u64,
}

fn additive_sample(n: usize, noise: f64, seed: u64) -> CliResult<PairedSample> {
    let base = generate(&ShapeSpec::new(
        Shape::Independent { p: 1, q: 1 },
        n,
        0.0,
        seed,
    )?)?;
    let (x, e) = base.into_blocks();
    let y: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(e.as_slice())
        .map(|(a, b)| a + noise * b)
        .collect();
    Ok(PairedSample::new(x, Block::column(&y))?)
}

fn simulate(a: &SimulateArgs) -> CliResult<Vec<u8>> {
    let start = Instant::now();
    if a.n < 4 || a.reps < 2 || a.draws == 0 {
        return usage("need --n ≥ 4, --reps ≥ 2 and --draws ≥ 1");
    }
    let seed = a.out.seed;
    let sample_seed = |k: usize| derive_seed(seed, 1000 + k as u64);
    let (emp, draws, limit_variance, v2_ref, var_h1, tail) = match a.regime {
        Regime::Degenerate => {
            let indep = |n, s| {
                generate(&ShapeSpec::new(
                    Shape::Independent { p: a.p, q: a.q },
                    n,
                    0.0,
                    s,
                )?)
            };
            let emp = (0..a.reps)
                .map(|k| Ok(a.n as f64 * dcov_core::dcov_usq(&indep(a.n, sample_seed(k))?)?.value))
                .collect::<Result<Vec<f64>, DcovError>>()?;
            let spectrum = h2_spectrum(
                &indep(a.spectrum_n, derive_seed(seed, 1))?,
                a.basis,
                derive_seed(seed, 2),
            )?;
            let draws = sample_degenerate_limit(&spectrum, a.draws, derive_seed(seed, 3))?;
            let tail = spectrum.tail_fraction(spectrum.len() / 2);
            (
                emp,
                draws,
                spectrum.limit_variance(),
                None,
                None,
                Some(tail),
            )
        }
        Regime::Normal => {
            if a.noise.is_nan() || a.noise <= 0.0 {
                return usage("--noise must be positive");
            }
            let v_ref =
                dcov_usq_streaming(&additive_sample(a.ref_n, a.noise, derive_seed(seed, 1))?)?
                    .value;
            let root_n = (a.n as f64).sqrt();
            let emp = (0..a.reps)
                .map(|k| {
                    let s = additive_sample(a.n, a.noise, sample_seed(k))?;
                    Ok(root_n * (dcov_core::dcov_usq(&s)?.value - v_ref))
                })
                .collect::<CliResult<Vec<f64>>>()?;
            let var_h1 = var_h1_hat(
                &additive_sample(a.var_n, a.noise, derive_seed(seed, 2))?,
                a.var_n,
                derive_seed(seed, 3),
            )?;
            let draws = sample_normal_limit(var_h1, a.draws, derive_seed(seed, 4))?;
            (emp, draws, 16.0 * var_h1, Some(v_ref), Some(var_h1), None)
        }
    };
    let (se, sd) = (sorted(&emp), sorted(&draws));
    let quantiles = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99]
        .iter()
        .map(|&prob| QuantileRow {
            prob,
            empirical: quantile_sorted(&se, prob),
            limit: quantile_sorted(&sd, prob),
        })
        .collect();
    json(SimulationOutput {
        regime: a.regime,
        statistic: match a.regime {
            Regime::Degenerate => "n*dcov",
            Regime::Normal => "sqrt(n)*(dcov - v2_ref)",
        },
        n: a.n,
        reps: a.reps,
        draws: a.draws,
        ks_distance: ks_distance(&emp, &draws),
        empirical_mean: mean(&emp),
        empirical_variance: variance(&emp),
        limit_variance,
        v2_ref,
        var_h1,
        tail_fraction: tail,
        quantiles,
        seed,
        runtime_ms: elapsed_ms(start),
    })
}

#[derive(Serialize)]
struct IntegralOutput {
    #[serde(flatten)]
    check: IntegralCheck,
    method: &'static str,
    /// Requested tolerance for quadrature, three standard errors for Monte Carlo.
    tolerance: f64,
    within_tolerance: bool,
    seed: u64,
    runtime_ms: u64,
}

fn verify_integral(a: &IntegralArgs) -> CliResult<Vec<u8>> {
    let start = Instant::now();
    if a.p == 0 {
        return usage("--p must be at least 1");
    }
    let parts: Vec<f64> = match a.x.split(',').map(|t| t.trim().parse::<f64>()).collect() {
        Ok(v) => v,
        Err(_) => return usage(format!("cannot parse --x `{}`", a.x)),
    };
    let x = match parts.len() {
        1 => {
            let mut v = vec![0.0; a.p];
            v[0] = parts[0];
            v
        }
        k if k == a.p => parts,
        k => return usage(format!("--x has {k} components, expected 1 or {}", a.p)),
    };
    let quadrature = a.p == 1 && !a.mc;
    let budget = if quadrature {
        if a.tol.is_nan() || a.tol <= 0.0 {
            return usage("--tol must be positive");
        }
        IntegralBudget::Tolerance(a.tol)
    } else {
        if a.samples < 2 {
            return usage("--samples must be at least 2");
        }
        IntegralBudget::Samples(a.samples)
    };
    let check = verify_fundamental_integral(a.p, &x, budget, a.out.seed)?;
    let tolerance = if quadrature {
        a.tol
    } else {
        3.0 * check.standard_error
    };
    json(IntegralOutput {
        within_tolerance: check.abs_error() <= tolerance,
        method: if quadrature {
            "quadrature"
        } else {
            "monte-carlo"
        },
        tolerance,
        check,
        seed: a.out.seed,
        runtime_ms: elapsed_ms(start),
    })
}

fn gen(a: &GenArgs) -> CliResult<Vec<u8>> {
    let shape = match a.shape {
        Shape::Linear { .. } => Shape::Linear { rho: a.rho },
        Shape::Independent { .. } => Shape::Independent { p: a.p, q: a.q },
        s => s,
    };
    let spec = ShapeSpec::new(shape, a.n, a.noise, a.out.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let sample = generate(&spec)?;
    let mut buf = Vec::new();
    dcov_core::io::write_csv_to(&mut buf, &sample)?;
    Ok(buf)
}

fn execute(command: &Command) -> CliResult<(Vec<u8>, Option<PathBuf>)> {
    let (bytes, out) = match command {
        Command::Estimate(a) => (estimate(a)?, &a.out.out),
        Command::Test(a) => (test(a)?, &a.out.out),
        Command::Asymptest(a) => (asymptest(a)?, &a.out.out),
        Command::SimulateLimits(a) => (simulate(a)?, &a.out.out),
        Command::VerifyIntegral(a) => (verify_integral(a)?, &a.out.out),
        Command::Gen(a) => (gen(a)?, &a.out.out),
    };
    Ok((bytes, out.clone()))
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().ansi().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let Cli { threads, command } = cli;
    let result = with_threads(threads, || execute(&command)).and_then(|(bytes, path)| {
        match path {
            Some(p) => fs::write(p, &bytes)?,
            None => stdout.write_all(&bytes)?,
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}
