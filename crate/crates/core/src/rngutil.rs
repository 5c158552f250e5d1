//! Small deterministic sampling helpers shared across modules.

use rand::Rng;

/// Standard normal sample via Box-Muller. Always consumes exactly two
/// uniforms so call sequences stay reproducible.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
