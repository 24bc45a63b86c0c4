//! Gated recurrent cell.
//!
//! The deterministic transition is a standard GRU (update + reset gates,
//! reset applied to the hidden-to-candidate path). Input-to-hidden weights
//! use truncated-normal fan-in init; hidden-to-hidden weights are orthogonal
//! per gate.

use ndarray::s;
use rand_chacha::ChaCha8Rng;

use crate::error::{ClawError, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::param::{orthogonal_init, trunc_normal_init, zeros_init, ParamId, ParamStore};
use crate::numerics::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RecurrentCell {
    pub name: String,
    pub input_width: usize,
    pub state_width: usize,
    w_ih: ParamId, // input_width x 3H, gate order [r | z | n]
    w_hh: ParamId, // H x 3H
    b_ih: ParamId, // 1 x 3H
    b_hh: ParamId, // 1 x 3H
}

impl RecurrentCell {
    pub fn new<R: Scalar>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        input_width: usize,
        state_width: usize,
    ) -> Self {
        let name = name.into();
        let h = state_width;
        let w_ih = store.add(
            format!("{name}/w_ih"),
            trunc_normal_init(rng, input_width, 3 * h, input_width),
        );
        // Orthogonal block per gate.
        let mut whh = ndarray::Array2::<R>::zeros((h, 3 * h));
        for gate in 0..3 {
            let block = orthogonal_init::<R>(rng, h);
            whh.slice_mut(s![.., gate * h..(gate + 1) * h]).assign(&block);
        }
        let w_hh = store.add(format!("{name}/w_hh"), whh);
        let b_ih = store.add(format!("{name}/b_ih"), zeros_init(1, 3 * h));
        let b_hh = store.add(format!("{name}/b_hh"), zeros_init(1, 3 * h));
        RecurrentCell { name, input_width, state_width, w_ih, w_hh, b_ih, b_hh }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        [self.w_ih, self.w_hh, self.b_ih, self.b_hh].into_iter()
    }

    pub fn mount<'g, R: Scalar>(
        &self,
        g: &'g Graph<R>,
        store: &ParamStore<R>,
        frozen: bool,
    ) -> GruVars<'g, R> {
        let m = |id| if frozen { g.frozen(store, id) } else { g.param(store, id) };
        GruVars {
            name: self.name.clone(),
            input_width: self.input_width,
            state_width: self.state_width,
            w_ih: m(self.w_ih),
            w_hh: m(self.w_hh),
            b_ih: m(self.b_ih),
            b_hh: m(self.b_hh),
        }
    }
}

pub struct GruVars<'g, R: Scalar> {
    name: String,
    input_width: usize,
    state_width: usize,
    w_ih: Var<'g, R>,
    w_hh: Var<'g, R>,
    b_ih: Var<'g, R>,
    b_hh: Var<'g, R>,
}

impl<'g, R: Scalar> GruVars<'g, R> {
    /// One deterministic step: identical `(state, input)` pairs always yield
    /// identical next states.
    pub fn step(&self, state: Var<'g, R>, input: Var<'g, R>) -> Result<Var<'g, R>> {
        if input.shape().1 != self.input_width || state.shape().1 != self.state_width {
            return Err(ClawError::Config(format!(
                "recurrent cell `{}` expects input {} / state {}, got {} / {}",
                self.name,
                self.input_width,
                self.state_width,
                input.shape().1,
                state.shape().1
            )));
        }
        let h = self.state_width;
        let gi = input.matmul(self.w_ih) + self.b_ih;
        let gh = state.matmul(self.w_hh) + self.b_hh;

        let r = (gi.slice_cols(0, h) + gh.slice_cols(0, h)).sigmoid();
        let z = (gi.slice_cols(h, 2 * h) + gh.slice_cols(h, 2 * h)).sigmoid();
        let n = (gi.slice_cols(2 * h, 3 * h) + r * gh.slice_cols(2 * h, 3 * h)).tanh();

        let one = state.graph().scalar(1.0);
        Ok((one - z) * n + z * state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn step_is_deterministic() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cell = RecurrentCell::new(&mut store, &mut rng, "gru", 3, 5);

        let run = || {
            let g = Graph::new();
            let v = cell.mount(&g, &store, false);
            let h = g.constant(array![[0.1, -0.2, 0.3, 0.0, 0.5]]);
            let x = g.constant(array![[1.0, 0.0, -1.0]]);
            v.step(h, x).unwrap().value()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_state_zero_params_stays_zero() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = RecurrentCell::new(&mut store, &mut rng, "gru", 2, 4);
        for id in cell.param_ids() {
            store.get_mut(id).values.fill(0.0);
        }
        let g = Graph::new();
        let v = cell.mount(&g, &store, false);
        let next = v.step(g.zeros(1, 4), g.constant(array![[0.7, -0.7]])).unwrap();
        assert!(next.value().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bad_widths_are_config_errors() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = RecurrentCell::new(&mut store, &mut rng, "gru", 2, 4);
        let g = Graph::new();
        let v = cell.mount(&g, &store, false);
        let err = v.step(g.zeros(1, 3), g.zeros(1, 2)).unwrap_err();
        assert!(matches!(err, ClawError::Config(_)));
    }
}
