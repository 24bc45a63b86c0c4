//! Distribution heads: dense trunks ending in distribution parameters.

use rand_chacha::ChaCha8Rng;

use crate::distributions::{BetaVector, DiagGaussian, BETA_FLOOR, SIGMA_MIN};
use crate::error::Result;
use crate::numerics::dense::{mlp_widths, Activation, DenseBlock, DenseVars};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::param::ParamStore;
use crate::numerics::scalar::Scalar;

/// Dense trunk emitting a diagonal Gaussian: raw output splits into mean and
/// pre-std; std goes through softplus plus the global floor.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub block: DenseBlock,
    pub dim: usize,
}

impl GaussianHead {
    pub fn new<R: Scalar>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        units: usize,
        layers: usize,
        dim: usize,
    ) -> Self {
        let block = DenseBlock::new(
            store,
            rng,
            name,
            &mlp_widths(input, units, layers, 2 * dim),
            Activation::Selu,
        );
        GaussianHead { block, dim }
    }

    pub fn mount<'g, R: Scalar>(
        &self,
        g: &'g Graph<R>,
        store: &ParamStore<R>,
        frozen: bool,
    ) -> GaussianHeadVars<'g, R> {
        GaussianHeadVars { vars: self.block.mount(g, store, frozen), dim: self.dim }
    }
}

pub struct GaussianHeadVars<'g, R: Scalar> {
    vars: DenseVars<'g, R>,
    dim: usize,
}

impl<'g, R: Scalar> GaussianHeadVars<'g, R> {
    pub fn apply(&self, input: Var<'g, R>) -> Result<DiagGaussian<'g, R>> {
        let raw = self.vars.apply(input)?;
        let mean = raw.slice_cols(0, self.dim);
        let std = raw.slice_cols(self.dim, 2 * self.dim).softplus().add_const(SIGMA_MIN);
        Ok(DiagGaussian::new(mean, std))
    }
}

/// Dense trunk emitting Beta concentrations, each `>= 1 + BETA_FLOOR`.
#[derive(Debug, Clone)]
pub struct BetaHead {
    pub block: DenseBlock,
    pub dim: usize,
}

impl BetaHead {
    pub fn new<R: Scalar>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        units: usize,
        layers: usize,
        dim: usize,
    ) -> Self {
        let block = DenseBlock::new(
            store,
            rng,
            name,
            &mlp_widths(input, units, layers, 2 * dim),
            Activation::Selu,
        );
        BetaHead { block, dim }
    }

    pub fn mount<'g, R: Scalar>(
        &self,
        g: &'g Graph<R>,
        store: &ParamStore<R>,
        frozen: bool,
    ) -> BetaHeadVars<'g, R> {
        BetaHeadVars { vars: self.block.mount(g, store, frozen), dim: self.dim }
    }
}

pub struct BetaHeadVars<'g, R: Scalar> {
    vars: DenseVars<'g, R>,
    dim: usize,
}

impl<'g, R: Scalar> BetaHeadVars<'g, R> {
    pub fn apply(&self, input: Var<'g, R>) -> Result<BetaVector<'g, R>> {
        let raw = self.vars.apply(input)?;
        let alpha = raw.slice_cols(0, self.dim).softplus().add_const(1.0 + BETA_FLOOR);
        let beta = raw.slice_cols(self.dim, 2 * self.dim).softplus().add_const(1.0 + BETA_FLOOR);
        Ok(BetaVector::new(alpha, beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn zeroed_gaussian_head_gives_softplus_floor_std() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = GaussianHead::new(&mut store, &mut rng, "h", 3, 8, 1, 2);
        for id in head.block.param_ids() {
            store.get_mut(id).values.fill(0.0);
        }
        let g = Graph::new();
        let d = head
            .mount(&g, &store, false)
            .apply(g.constant(array![[1.0, -1.0, 0.5]]))
            .unwrap();
        let expect = (2.0f64).ln() + SIGMA_MIN; // softplus(0) + floor
        assert!(d.mean.value().iter().all(|&m| m == 0.0));
        assert!(d.std.value().iter().all(|&s| (s - expect).abs() < 1e-12));
    }

    #[test]
    fn beta_head_concentrations_exceed_one() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = BetaHead::new(&mut store, &mut rng, "b", 4, 8, 2, 3);
        let g = Graph::new();
        let d = head
            .mount(&g, &store, false)
            .apply(g.constant(array![[2.0, -3.0, 0.1, 0.9]]))
            .unwrap();
        assert!(d.alpha.value().iter().all(|&a| a > 1.0));
        assert!(d.beta.value().iter().all(|&b| b > 1.0));
    }
}
