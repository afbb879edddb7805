//! Deterministic numeric core: dense f64 tensors, a reverse-mode tape,
//! an adaptive-moment optimizer, seeded randomness and gradient checks.

mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckEntry, GradCheckReport};
pub use params::{Adam, Gradients, ParamStore};
pub use rng::Rng;
pub use tape::{Tape, ValueId};
pub use tensor::Tensor;

/// Additive guard applied inside every logarithm of the loss formulas, so
/// `0 * ln(0)` evaluates to exactly zero and oracles can mirror the same rule.
pub const LN_GUARD: f64 = 1e-12;

/// `ln(x + LN_GUARD)` — the guarded logarithm shared by losses and test oracles.
pub fn ln_guarded(x: f64) -> f64 {
    (x + LN_GUARD).ln()
}

/// Order-canonical sum: sorts the addends before a compensated accumulation,
/// so any permutation of the same values produces a bit-identical result.
pub fn stable_sum(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN summands"));
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values.iter() {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
