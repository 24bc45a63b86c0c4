//! Diagonal Gaussian with reparameterized sampling.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{normal_noise, LN_2PI};
use crate::numerics::graph::Var;
use crate::numerics::scalar::Scalar;

/// Independent Gaussians per dimension: `mean`, `std` are `B x D`.
/// Standard deviations must be strictly positive; heads enforce this with a
/// softplus-plus-floor transform before construction.
#[derive(Clone, Copy)]
pub struct DiagGaussian<'g, R: Scalar> {
    pub mean: Var<'g, R>,
    pub std: Var<'g, R>,
}

impl<'g, R: Scalar> DiagGaussian<'g, R> {
    pub fn new(mean: Var<'g, R>, std: Var<'g, R>) -> Self {
        debug_assert_eq!(mean.shape(), std.shape());
        debug_assert!(std.value().iter().all(|s| s.as_f64() > 0.0), "non-positive std");
        DiagGaussian { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.shape().1
    }

    /// Reparameterized sample `mean + std * z` at the given noise.
    pub fn rsample_with(&self, noise: &Array2<f64>) -> Var<'g, R> {
        let z = self.mean.graph().constant_f64(noise);
        self.mean + self.std * z
    }

    pub fn rsample(&self, rng: &mut ChaCha8Rng) -> Var<'g, R> {
        let (r, c) = self.mean.shape();
        self.rsample_with(&normal_noise(rng, r, c))
    }

    /// Log-density of `x`, summed over dimensions (`B x 1`).
    pub fn log_prob(&self, x: Var<'g, R>) -> Var<'g, R> {
        let z = (x - self.mean) / self.std;
        let per_dim = (z.square() + self.std.ln().scale(2.0)).scale(-0.5)
            + self.mean.graph().scalar(-0.5 * LN_2PI);
        per_dim.sum_rows()
    }

    /// Closed-form entropy, summed over dimensions (`B x 1`).
    pub fn entropy(&self) -> Var<'g, R> {
        (self.std.ln() + self.mean.graph().scalar(0.5 * (LN_2PI + 1.0))).sum_rows()
    }

    pub fn mode(&self) -> Var<'g, R> {
        self.mean
    }

    /// Closed-form KL(self || other), summed over dimensions (`B x 1`).
    pub fn kl(&self, other: &DiagGaussian<'g, R>) -> Var<'g, R> {
        let g = self.mean.graph();
        let var_ratio = (self.std / other.std).square();
        let mean_term = ((self.mean - other.mean) / other.std).square();
        let per_dim =
            (other.std.ln() - self.std.ln()) + (var_ratio + mean_term).scale(0.5) + g.scalar(-0.5);
        per_dim.sum_rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::param::ParamStore;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn standardized_sample_equals_noise() {
        let g: Graph<f64> = Graph::new();
        let d = DiagGaussian::new(g.zeros(1, 3), g.constant(array![[1.0, 1.0, 1.0]]));
        let noise = array![[0.3, -1.7, 0.0]];
        let s = d.rsample_with(&noise);
        assert_eq!(s.value(), noise);
    }

    #[test]
    fn floored_std_sample_stays_near_mean() {
        let g: Graph<f64> = Graph::new();
        let d = DiagGaussian::new(
            g.constant(array![[5.0]]),
            g.constant(array![[super::super::SIGMA_MIN]]),
        );
        let s = d.rsample_with(&array![[2.0]]);
        assert!((s.scalar_value() - 5.0).abs() <= 2.0 * super::super::SIGMA_MIN * (1.0 + 1e-9));
    }

    #[test]
    fn standard_normal_log_prob_at_zero() {
        let g: Graph<f64> = Graph::new();
        let d = DiagGaussian::new(g.zeros(1, 1), g.constant(array![[1.0]]));
        let lp = d.log_prob(g.zeros(1, 1)).scalar_value();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_standard_normal() {
        let g: Graph<f64> = Graph::new();
        let d = DiagGaussian::new(g.zeros(1, 1), g.constant(array![[1.0]]));
        assert!((d.entropy().scalar_value() - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn kl_identical_is_zero_and_unit_shift_is_half() {
        let g: Graph<f64> = Graph::new();
        let q = DiagGaussian::new(g.constant(array![[1.0]]), g.constant(array![[1.0]]));
        let p = DiagGaussian::new(g.zeros(1, 1), g.constant(array![[1.0]]));
        assert!((q.kl(&q).scalar_value()).abs() < 1e-15);
        assert!((q.kl(&p).scalar_value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pathwise_sample_gradients_are_exact() {
        // d sample / d mean = 1, d sample / d std = z, exactly.
        let mut store: ParamStore<f64> = ParamStore::new();
        let mu = store.add("mu", array![[0.2]]);
        let sigma = store.add("sigma", array![[0.7]]);
        let z = 1.37;
        let g = Graph::new();
        let d = DiagGaussian::new(g.param(&store, mu), g.param(&store, sigma));
        let s = d.rsample_with(&array![[z]]);
        g.backward(s.sum_all(), &mut store).unwrap();
        assert_eq!(store.grad(mu)[[0, 0]], 1.0);
        assert_eq!(store.grad(sigma)[[0, 0]], z);
    }

    #[test]
    fn kl_matches_monte_carlo_in_5d() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g: Graph<f64> = Graph::new();
        let qm = array![[0.3, -0.5, 1.2, 0.0, -2.0]];
        let qs = array![[0.8, 1.5, 0.3, 1.0, 0.6]];
        let pm = array![[0.0, 0.5, 1.0, -0.3, -1.0]];
        let ps = array![[1.2, 0.9, 0.5, 0.7, 1.1]];
        let q = DiagGaussian::new(g.constant(qm), g.constant(qs));
        let p = DiagGaussian::new(g.constant(pm), g.constant(ps));
        let closed = q.kl(&p).scalar_value();

        // One batched sample matrix: KL = E_q[log q - log p].
        let n = 1_000_000usize;
        let x = q.rsample_with(&normal_noise(&mut rng, n, 5));
        let mc = (q.log_prob(x) - p.log_prob(x)).mean_all().scalar_value();
        assert!(
            (mc - closed).abs() / closed.abs() < 0.01,
            "mc {mc} vs closed {closed}"
        );
    }
}
