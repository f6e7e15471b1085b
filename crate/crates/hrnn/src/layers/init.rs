//! Parameter initialization. Weights are Glorot-uniform over the per-block
//! fan (gate blocks of the LSTM kernels count as separate fan-out H);
//! biases start at zero except the LSTM forget gate, which starts at 1.0.
//! All draws come from a single seeded stream in insertion order, so a seed
//! pins every parameter bit for a given architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

pub type InitRng = ChaCha8Rng;

pub fn init_rng(seed: u64) -> InitRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on [-limit, limit] with limit = sqrt(6 / (fan_in + fan_out)).
/// Draws in f64 and casts, so fp32 and fp64 runs share the same stream.
pub fn glorot<F: Real>(rng: &mut InitRng, count: usize, fan_in: usize, fan_out: usize) -> Vec<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count)
        .map(|_| F::from_f64(rng.gen_range(-limit..=limit)))
        .collect()
}
