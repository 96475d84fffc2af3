//! Dense matrices, a reverse-mode tape, and seeded Gumbel noise.

mod matrix;
mod tape;

pub mod gradcheck;

pub use matrix::{Axis, Matrix};
pub use tape::{Gradients, ReduceAxis, ReduceKind, Tape, Var};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UNIFORM_CLAMP: f64 = 1e-12;

/// Counter-based generator: the same `(seed, counter)` always yields the
/// same stream, independent of any other draws.
pub fn stream_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    rng
}

/// Standard Gumbel sample `-ln(-ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// `rows x cols` matrix of i.i.d. Gumbel(0, 1) noise from stream `(seed, counter)`.
pub fn gumbel_noise(rows: usize, cols: usize, seed: u64, counter: u64) -> Matrix {
    let mut rng = stream_rng(seed, counter);
    Matrix::from_fn(rows, cols, |_, _| gumbel(rng.random::<f64>()))
}
