//! Deterministic random streams.
//!
//! Every Monte Carlo or resampling loop derives the generator for work item
//! `k` from `(seed, k)` alone, so results do not depend on how the items are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of consecutive replicates that share one derived stream.
pub const REPLICATE_BLOCK: usize = 1024;

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Independent child seed for one stage of a multi-stage procedure.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    use rand::Rng;
    stream_rng(seed, u64::MAX - stage).random()
}

/// Splits `0..total` into fixed-size blocks of [`REPLICATE_BLOCK`] items.
pub(crate) fn blocks(total: usize) -> impl Iterator<Item = (u64, std::ops::Range<usize>)> {
    (0..total.div_ceil(REPLICATE_BLOCK)).map(move |b| {
        let start = b * REPLICATE_BLOCK;
        (b as u64, start..(start + REPLICATE_BLOCK).min(total))
    })
}

/// Uniformly random permutation of `0..n` by Fisher–Yates.
pub fn random_permutation<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    fisher_yates(rng, &mut perm);
    perm
}

pub(crate) fn fisher_yates<R: rand::Rng + ?Sized>(rng: &mut R, perm: &mut [usize]) {
    for i in (1..perm.len()).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
}

/// Runs `f` on a dedicated rayon pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
