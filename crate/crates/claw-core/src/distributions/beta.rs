//! Beta distribution vectors with pathwise-implicit reparameterized sampling.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{uniform_noise, SUPPORT_EPS};
use crate::numerics::graph::Var;
use crate::numerics::scalar::Scalar;

/// Independent Beta distributions per dimension; `alpha`, `beta` are `B x D`
/// concentrations, each kept `>= 1 + BETA_FLOOR` by the producing head, so
/// every marginal is unimodal.
#[derive(Clone, Copy)]
pub struct BetaVector<'g, R: Scalar> {
    pub alpha: Var<'g, R>,
    pub beta: Var<'g, R>,
}

impl<'g, R: Scalar> BetaVector<'g, R> {
    pub fn new(alpha: Var<'g, R>, beta: Var<'g, R>) -> Self {
        debug_assert_eq!(alpha.shape(), beta.shape());
        BetaVector { alpha, beta }
    }

    /// Reparameterized sample in (0, 1) at frozen uniforms. The forward pass
    /// inverts the CDF; the backward pass applies the implicit derivative,
    /// so the map is smooth in the concentrations for fixed noise.
    pub fn rsample_with(&self, uniforms: Array2<f64>) -> Var<'g, R> {
        self.alpha.graph().beta_sample(self.alpha, self.beta, uniforms)
    }

    pub fn rsample(&self, rng: &mut ChaCha8Rng) -> Var<'g, R> {
        let (r, c) = self.alpha.shape();
        self.rsample_with(uniform_noise(rng, r, c))
    }

    /// Log-density of fixed data in [0, 1], summed over dims (`B x 1`).
    /// Boundary values are clamped inward by `SUPPORT_EPS`.
    pub fn log_prob_data(&self, x: &Array2<f64>) -> Var<'g, R> {
        let g = self.alpha.graph();
        let xc = x.mapv(|v| v.clamp(SUPPORT_EPS, 1.0 - SUPPORT_EPS));
        let ln_x = g.constant_f64(&xc.mapv(f64::ln));
        let ln_1mx = g.constant_f64(&xc.mapv(|v| (1.0 - v).ln()));
        self.log_prob_terms(ln_x, ln_1mx)
    }

    /// Log-density of a graph value in (0, 1), summed over dims.
    pub fn log_prob(&self, x: Var<'g, R>) -> Var<'g, R> {
        let x = x.clamp_const(SUPPORT_EPS, 1.0 - SUPPORT_EPS);
        let one = x.graph().scalar(1.0);
        self.log_prob_terms(x.ln(), (one - x).ln())
    }

    fn log_prob_terms(&self, ln_x: Var<'g, R>, ln_1mx: Var<'g, R>) -> Var<'g, R> {
        let g = self.alpha.graph();
        let one = g.scalar(1.0);
        let ln_beta_fn =
            self.alpha.lgamma() + self.beta.lgamma() - (self.alpha + self.beta).lgamma();
        let per_dim = (self.alpha - one) * ln_x + (self.beta - one) * ln_1mx - ln_beta_fn;
        per_dim.sum_rows()
    }

    /// Mode `(a - 1) / (a + b - 2)` for `a, b > 1`; falls back to the mean
    /// `a / (a + b)` where the mode is undefined.
    pub fn mode(&self) -> Var<'g, R> {
        let a = self.alpha.value_f64();
        let b = self.beta.value_f64();
        let mut out = Array2::zeros(a.raw_dim());
        ndarray::Zip::from(&mut out).and(&a).and(&b).for_each(|o, &a, &b| {
            *o = if a > 1.0 && b > 1.0 && a + b > 2.0 {
                (a - 1.0) / (a + b - 2.0)
            } else {
                a / (a + b)
            };
        });
        self.alpha.graph().constant_f64(&out)
    }

    pub fn mean(&self) -> Var<'g, R> {
        self.alpha / (self.alpha + self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn symmetric_beta_mean_is_half() {
        let g: Graph<f64> = Graph::new();
        let n = 100_000usize;
        let d = BetaVector::new(
            g.constant(Array2::from_elem((n, 1), 2.0)),
            g.constant(Array2::from_elem((n, 1), 2.0)),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = d.rsample(&mut rng);
        let mean = s.value().mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(s.value().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn uniform_log_prob_is_zero() {
        let g: Graph<f64> = Graph::new();
        let d = BetaVector::new(g.constant(array![[1.0]]), g.constant(array![[1.0]]));
        for x in [0.1, 0.5, 0.93] {
            assert!(d.log_prob_data(&array![[x]]).scalar_value().abs() < 1e-12);
        }
    }

    #[test]
    fn modes_match_closed_form() {
        let g: Graph<f64> = Graph::new();
        let d = BetaVector::new(
            g.constant(array![[2.0, 5.0]]),
            g.constant(array![[2.0, 2.0]]),
        );
        let m = d.mode().value();
        assert!((m[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((m[[0, 1]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mode_falls_back_to_mean() {
        let g: Graph<f64> = Graph::new();
        let d = BetaVector::new(g.constant(array![[1.0]]), g.constant(array![[3.0]]));
        assert!((d.mode().scalar_value() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        // Trapezoid quadrature over (0,1) for random concentrations in [1.1, 10].
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        use rand::Rng;
        for _ in 0..10 {
            let a = 1.1 + rng.random::<f64>() * 8.9;
            let b = 1.1 + rng.random::<f64>() * 8.9;
            let n = 40_000usize;
            let h = 1.0 / n as f64;
            let mut integral = 0.0;
            let pdf = |x: f64| crate::numerics::special::beta_ln_pdf(x, a, b).exp();
            for i in 0..n {
                let x0 = (i as f64 * h).max(1e-12);
                let x1 = ((i + 1) as f64 * h).min(1.0 - 1e-12);
                integral += 0.5 * (pdf(x0) + pdf(x1)) * (x1 - x0);
            }
            assert!((integral - 1.0).abs() < 1e-3, "a={a} b={b}: {integral}");
        }
    }

    #[test]
    fn graph_log_prob_matches_data_log_prob() {
        let g: Graph<f64> = Graph::new();
        let d = BetaVector::new(g.constant(array![[2.5, 1.2]]), g.constant(array![[3.0, 4.0]]));
        let x = array![[0.33, 0.71]];
        let a = d.log_prob_data(&x).scalar_value();
        let b = d.log_prob(g.constant_f64(&x)).scalar_value();
        assert!((a - b).abs() < 1e-12);
        // And against the scalar special-function form.
        let direct = crate::numerics::special::beta_ln_pdf(0.33, 2.5, 3.0)
            + crate::numerics::special::beta_ln_pdf(0.71, 1.2, 4.0);
        assert!((a - direct).abs() < 1e-10);
    }
}
