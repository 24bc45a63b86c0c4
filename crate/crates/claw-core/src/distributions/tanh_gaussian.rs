//! Tanh-squashed diagonal Gaussian; samples lie strictly inside (-1, 1).

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{normal_noise, DiagGaussian, SUPPORT_EPS};
use crate::numerics::graph::Var;
use crate::numerics::scalar::Scalar;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy)]
pub struct TanhGaussian<'g, R: Scalar> {
    pub base: DiagGaussian<'g, R>,
}

impl<'g, R: Scalar> TanhGaussian<'g, R> {
    pub fn new(base: DiagGaussian<'g, R>) -> Self {
        TanhGaussian { base }
    }

    /// Reparameterized sample and its pre-squash value. The squashed value is
    /// nudged off the boundary: `tanh` saturates to exactly 1 in floating
    /// point for large inputs, where the pathwise gradient is already zero.
    pub fn rsample_with(&self, noise: &Array2<f64>) -> (Var<'g, R>, Var<'g, R>) {
        let pre = self.base.rsample_with(noise);
        let x = pre.tanh().clamp_const(-1.0 + SUPPORT_EPS, 1.0 - SUPPORT_EPS);
        (x, pre)
    }

    pub fn rsample(&self, rng: &mut ChaCha8Rng) -> (Var<'g, R>, Var<'g, R>) {
        let (r, c) = self.base.mean.shape();
        self.rsample_with(&normal_noise(rng, r, c))
    }

    /// Log-density at the squashed value given its known pre-squash value.
    /// `log p(x) = log N(pre) - sum log(1 - tanh(pre)^2)`, with the correction
    /// in the stable form `2 (ln 2 - pre - softplus(-2 pre))`.
    pub fn log_prob_from_pre(&self, pre: Var<'g, R>) -> Var<'g, R> {
        let g = pre.graph();
        let base_lp = self.base.log_prob(pre);
        let corr = (g.scalar(LN_2) - pre - pre.scale(-2.0).softplus()).scale(2.0);
        base_lp - corr.sum_rows()
    }

    /// Log-density of external data. Values on or outside the boundary are
    /// clamped inward by `SUPPORT_EPS` before the inverse tanh; bounded data
    /// can sit exactly on the box edge.
    pub fn log_prob(&self, x: &Array2<f64>) -> Var<'g, R> {
        let g = self.base.mean.graph();
        let pre = x.mapv(|v| {
            let v = v.clamp(-1.0 + SUPPORT_EPS, 1.0 - SUPPORT_EPS);
            // atanh
            0.5 * ((1.0 + v) / (1.0 - v)).ln()
        });
        self.log_prob_from_pre(g.constant_f64(&pre))
    }

    /// Single-sample entropy estimate `-log p(sample)`.
    pub fn entropy_sample(&self, rng: &mut ChaCha8Rng) -> Var<'g, R> {
        let (_, pre) = self.rsample(rng);
        -self.log_prob_from_pre(pre)
    }

    pub fn mode(&self) -> Var<'g, R> {
        self.base.mean.tanh().clamp_const(-1.0 + SUPPORT_EPS, 1.0 - SUPPORT_EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use ndarray::array;
    use rand::SeedableRng;

    fn dist(g: &Graph<f64>, mean: f64, std: f64, n: usize) -> TanhGaussian<'_, f64> {
        TanhGaussian::new(DiagGaussian::new(
            g.constant(Array2::from_elem((n, 1), mean)),
            g.constant(Array2::from_elem((n, 1), std)),
        ))
    }

    #[test]
    fn samples_stay_strictly_inside_the_box() {
        let g: Graph<f64> = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Extreme mean pushes tanh toward saturation.
        let d = dist(&g, 8.0, 3.0, 10_000);
        let (x, pre) = d.rsample(&mut rng);
        assert!(x.value().iter().all(|&v| v > -1.0 && v < 1.0));
        // log_prob finite on its own samples.
        let lp = d.log_prob_from_pre(pre);
        assert!(lp.value().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_prob_matches_histogram_of_samples() {
        let g: Graph<f64> = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000usize;
        let d = dist(&g, 0.3, 0.5, n);
        let (x, _) = d.rsample(&mut rng);
        let xs = x.value();

        let bins = 40usize;
        let mut counts = vec![0usize; bins];
        for &v in xs.iter() {
            let b = (((v + 1.0) / 2.0) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let width = 2.0 / bins as f64;
        let gg: Graph<f64> = Graph::new();
        let d1 = dist(&gg, 0.3, 0.5, 1);
        let mut checked = 0;
        for (b, &c) in counts.iter().enumerate() {
            let center = -1.0 + (b as f64 + 0.5) * width;
            let density = d1.log_prob(&array![[center]]).scalar_value().exp();
            let expected = density * width * n as f64;
            // Only compare bins with enough mass for 2% MC resolution.
            if expected > 20_000.0 {
                let rel = (c as f64 - expected).abs() / expected;
                assert!(rel < 0.02, "bin {b}: count {c} vs expected {expected}");
                checked += 1;
            }
        }
        assert!(checked >= 5, "too few populated bins ({checked})");
    }

    #[test]
    fn external_boundary_values_are_clamped_not_infinite() {
        let g: Graph<f64> = Graph::new();
        let d = dist(&g, 0.0, 1.0, 1);
        let lp = d.log_prob(&array![[1.0]]).scalar_value();
        assert!(lp.is_finite());
    }
}
