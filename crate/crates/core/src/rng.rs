//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream selected by
//! `(seed, stream id)`. Trial `k` of an experiment always reads the same
//! stream no matter which worker thread runs it, so results do not depend on
//! scheduling or thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream id namespaces. The top byte keeps unrelated uses of one master
/// seed from ever sharing a stream.
pub mod domain {
    pub const ANCHOR: u64 = 0x01 << 56;
    pub const NUISANCE: u64 = 0x02 << 56;
    pub const RETRY: u64 = 0x03 << 56;
    pub const COMPRESSOR: u64 = 0x04 << 56;
    pub const TRIAL: u64 = 0x05 << 56;
    pub const MAP: u64 = 0x06 << 56;
    pub const WAVEFORM: u64 = 0x07 << 56;
    pub const CHANNEL: u64 = 0x08 << 56;
    pub const PROBE: u64 = 0x09 << 56;
}

/// Returns the ChaCha8 stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for trial `k` of an experiment.
pub fn trial_rng(seed: u64, k: u64) -> ChaCha8Rng {
    stream_rng(seed, domain::TRIAL | k)
}

/// A child seed derived from `(seed, k)`, e.g. one codebook per outer
/// Monte Carlo repetition.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    stream_rng(seed, domain::RETRY | k).next_u64()
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Row-major fill so that the entry order in the stream is stable.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Uniform direction on the unit sphere in `R^n` (normalized Gaussian).
pub fn unit_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = gaussian_vector(n, rng);
        let norm = g.norm();
        if norm > 0.0 && norm.is_finite() {
            return g / norm;
        }
    }
}
