//! Bernoulli head parameterized by logits.

use ndarray::Array2;

use crate::numerics::graph::Var;
use crate::numerics::scalar::Scalar;

/// Bernoulli over {0, 1} per dimension, `logit` is `B x D`.
#[derive(Clone, Copy)]
pub struct BernoulliHead<'g, R: Scalar> {
    pub logit: Var<'g, R>,
}

impl<'g, R: Scalar> BernoulliHead<'g, R> {
    pub fn new(logit: Var<'g, R>) -> Self {
        BernoulliHead { logit }
    }

    pub fn prob(&self) -> Var<'g, R> {
        self.logit.sigmoid()
    }

    /// `b log p + (1-b) log(1-p)` in stable logit form, summed over dims.
    pub fn log_prob_data(&self, b: &Array2<f64>) -> Var<'g, R> {
        let g = self.logit.graph();
        let bv = g.constant_f64(b);
        // log p = -softplus(-l), log(1-p) = -softplus(l)
        let log_p = -(-self.logit).softplus();
        let log_1mp = -self.logit.softplus();
        let one = g.scalar(1.0);
        (bv * log_p + (one - bv) * log_1mp).sum_rows()
    }
}
