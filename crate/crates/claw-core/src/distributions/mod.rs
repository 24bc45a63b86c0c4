//! Probability distributions over graph variables: diagonal Gaussian,
//! tanh-squashed Gaussian, Beta vectors and Bernoulli heads.
//!
//! All distributions are batched: parameters are `B x D` variables, log-probs
//! and entropies reduce over `D` to `B x 1`. Sampling is reparameterized, so
//! gradients flow from samples back into the distribution parameters.

mod beta;
mod bernoulli;
mod gaussian;
mod tanh_gaussian;

pub use bernoulli::BernoulliHead;
pub use beta::BetaVector;
pub use gaussian::DiagGaussian;
pub use tanh_gaussian::TanhGaussian;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::numerics::param::standard_normal;

/// Smallest admissible standard deviation.
pub const SIGMA_MIN: f64 = 1e-4;

/// Floor added on top of 1 for Beta concentrations.
pub const BETA_FLOOR: f64 = 1e-4;

/// Clamp margin used when external data sits exactly on a support boundary.
pub const SUPPORT_EPS: f64 = 1e-6;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Draw a matrix of standard-normal noise.
pub fn normal_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || standard_normal(rng))
}

/// Draw a matrix of uniforms in the open interval (0, 1).
pub fn uniform_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    use rand::Rng;
    Array2::from_shape_simple_fn((rows, cols), || loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    })
}
