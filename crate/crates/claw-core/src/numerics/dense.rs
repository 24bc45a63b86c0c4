//! Fully connected blocks.

use rand_chacha::ChaCha8Rng;

use crate::error::{ClawError, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::param::{trunc_normal_init, zeros_init, ParamId, ParamStore};
use crate::numerics::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Selu,
    Linear,
}

/// A stack of affine layers. The activation is applied after every layer
/// except the last, which stays linear.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub name: String,
    pub widths: Vec<usize>,
    pub activation: Activation,
    layers: Vec<(ParamId, ParamId)>,
}

impl DenseBlock {
    /// `widths` lists input width followed by each layer's output width.
    pub fn new<R: Scalar>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        widths: &[usize],
        activation: Activation,
    ) -> Self {
        let name = name.into();
        assert!(widths.len() >= 2, "dense block {name} needs >= 1 layer");
        assert!(widths.iter().all(|&w| w > 0), "dense block {name}: zero width");
        let mut layers = Vec::new();
        for i in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let w = store.add(
                format!("{name}/l{i}/w"),
                trunc_normal_init(rng, fan_in, fan_out, fan_in),
            );
            let b = store.add(format!("{name}/l{i}/b"), zeros_init(1, fan_out));
            layers.push((w, b));
        }
        DenseBlock { name, widths: widths.to_vec(), activation, layers }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn mount<'g, R: Scalar>(
        &self,
        g: &'g Graph<R>,
        store: &ParamStore<R>,
        frozen: bool,
    ) -> DenseVars<'g, R> {
        let layers = self
            .layers
            .iter()
            .map(|&(w, b)| {
                if frozen {
                    (g.frozen(store, w), g.frozen(store, b))
                } else {
                    (g.param(store, w), g.param(store, b))
                }
            })
            .collect();
        DenseVars {
            name: self.name.clone(),
            input_width: self.input_width(),
            activation: self.activation,
            layers,
        }
    }
}

/// A dense block mounted into one graph.
pub struct DenseVars<'g, R: Scalar> {
    name: String,
    input_width: usize,
    activation: Activation,
    layers: Vec<(Var<'g, R>, Var<'g, R>)>,
}

impl<'g, R: Scalar> DenseVars<'g, R> {
    pub fn apply(&self, input: Var<'g, R>) -> Result<Var<'g, R>> {
        if input.shape().1 != self.input_width {
            return Err(ClawError::Config(format!(
                "block `{}` expects input width {}, got {}",
                self.name,
                self.input_width,
                input.shape().1
            )));
        }
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            x = x.matmul(*w) + *b;
            if i != last {
                x = match self.activation {
                    Activation::Selu => x.selu(),
                    Activation::Linear => x,
                };
            }
        }
        Ok(x)
    }
}

/// Widths helper: `in -> units x layers -> out`.
pub fn mlp_widths(input: usize, units: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(layers + 2);
    w.push(input);
    w.extend(std::iter::repeat(units).take(layers));
    w.push(output);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn zero_block(widths: &[usize], act: Activation) -> (ParamStore<f64>, DenseBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = DenseBlock::new(&mut store, &mut rng, "b", widths, act);
        for id in block.param_ids() {
            store.get_mut(id).values.fill(0.0);
        }
        (store, block)
    }

    #[test]
    fn zero_params_map_to_zero() {
        let (store, block) = zero_block(&[2, 3], Activation::Linear);
        let g = Graph::new();
        let out = block
            .mount(&g, &store, false)
            .apply(g.constant(array![[1.0, 2.0]]))
            .unwrap();
        assert_eq!(out.value(), array![[0.0, 0.0, 0.0]]);

        // Also for a deeper selu block on arbitrary input.
        let (store, block) = zero_block(&[3, 4, 4, 2], Activation::Selu);
        let g = Graph::new();
        let out = block
            .mount(&g, &store, false)
            .apply(g.constant(array![[-1.0, 0.5, 9.0]]))
            .unwrap();
        assert!(out.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_initialized_linear_block() {
        let (mut store, block) = zero_block(&[2, 2], Activation::Linear);
        let w = store.find("b/l0/w").unwrap();
        store.get_mut(w).values.assign(&array![[1.0, 0.0], [0.0, 1.0]]);
        let g = Graph::new();
        let out = block
            .mount(&g, &store, false)
            .apply(g.constant(array![[0.5, -0.5]]))
            .unwrap();
        assert_eq!(out.value(), array![[0.5, -0.5]]);
    }

    #[test]
    fn width_mismatch_names_the_block() {
        let (store, block) = zero_block(&[2, 2], Activation::Linear);
        let g: Graph<f64> = Graph::new();
        let err = block
            .mount(&g, &store, false)
            .apply(g.constant(array![[1.0, 2.0, 3.0]]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`b`"), "{msg}");
    }

    #[test]
    fn seeded_selu_forward_matches_straight_line_reimplementation() {
        // 2 -> 4 -> 1 selu block with seeded random parameters.
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let block = DenseBlock::new(&mut store, &mut rng, "net", &[2, 4, 1], Activation::Selu);

        let input = [0.3, 0.7];
        let g = Graph::new();
        let out = block
            .mount(&g, &store, false)
            .apply(g.constant(array![[input[0], input[1]]]))
            .unwrap()
            .scalar_value();

        // Independent forward pass with explicit loops.
        let lambda = 1.050_700_987_355_480_5;
        let alpha = 1.673_263_242_354_377_3;
        let w0 = store.values(store.find("net/l0/w").unwrap()).clone();
        let b0 = store.values(store.find("net/l0/b").unwrap()).clone();
        let w1 = store.values(store.find("net/l1/w").unwrap()).clone();
        let b1 = store.values(store.find("net/l1/b").unwrap()).clone();
        let mut hidden = [0.0f64; 4];
        for j in 0..4 {
            let mut s = b0[[0, j]];
            for i in 0..2 {
                s += input[i] * w0[[i, j]];
            }
            hidden[j] = if s > 0.0 { lambda * s } else { lambda * alpha * (s.exp() - 1.0) };
        }
        let mut expect = b1[[0, 0]];
        for j in 0..4 {
            expect += hidden[j] * w1[[j, 0]];
        }

        assert!((out - expect).abs() < 1e-14, "{out} vs {expect}");
    }
}
