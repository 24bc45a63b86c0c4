//! Parameter storage: named tensors with gradient accumulators.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ClawError, Result};
use crate::numerics::scalar::Scalar;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A single trainable tensor. The gradient always has the same shape as the
/// values and is accumulated additively by backward passes.
#[derive(Debug, Clone)]
pub struct Parameter<R: Scalar> {
    pub path: String,
    pub values: Array2<R>,
    pub grad: Array2<R>,
}

/// Owns every parameter of one model or agent. Single writer. Every store
/// (including clones) carries a unique id so graphs can tell stores apart
/// when several are mounted together.
#[derive(Debug)]
pub struct ParamStore<R: Scalar> {
    uid: u64,
    params: Vec<Parameter<R>>,
}

fn next_store_uid() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(1);
    COUNTER.fetch_add(1, Ordering::Relaxed)
}

impl<R: Scalar> Clone for ParamStore<R> {
    fn clone(&self) -> Self {
        ParamStore { uid: next_store_uid(), params: self.params.clone() }
    }
}

impl<R: Scalar> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Scalar> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { uid: next_store_uid(), params: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, path: impl Into<String>, values: Array2<R>) -> ParamId {
        let path = path.into();
        debug_assert!(
            !self.params.iter().any(|p| p.path == path),
            "duplicate parameter path {path}"
        );
        let grad = Array2::zeros(values.raw_dim());
        self.params.push(Parameter { path, values, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<R> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<R> {
        &mut self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &Array2<R> {
        &self.params[id.0].values
    }

    pub fn grad(&self, id: ParamId) -> &Array2<R> {
        &self.params[id.0].grad
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.params[id.0].path
    }

    pub fn find(&self, path: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.path == path).map(ParamId)
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Array2<R>) {
        let g = &mut self.params[id.0].grad;
        debug_assert_eq!(g.raw_dim(), delta.raw_dim());
        *g += delta;
    }

    /// Reset every gradient entry to exactly zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(R::zero());
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Error if any gradient entry is non-finite, naming the parameter path.
    pub fn check_grads_finite(&self) -> Result<()> {
        for p in &self.params {
            if p.grad.iter().any(|v| !v.is_finite()) {
                return Err(ClawError::Numerical(format!(
                    "non-finite gradient in parameter `{}`",
                    p.path
                )));
            }
        }
        Ok(())
    }

    /// Bitwise equality of all parameter values (paths must match too).
    pub fn values_bitwise_eq(&self, other: &ParamStore<R>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.path == b.path
                    && a.values.shape() == b.values.shape()
                    && a.values
                        .iter()
                        .zip(b.values.iter())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

// ── Initializers ─────────────────────────────────────────────────────

/// Truncated-normal fan-in init: std = 1/sqrt(fan_in), resampled beyond 2 std.
pub fn trunc_normal_init<R: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Array2<R> {
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        loop {
            let z: f64 = standard_normal(rng);
            if z.abs() <= 2.0 {
                return R::from_f64(z * std);
            }
        }
    })
}

/// Orthogonal-style init for square recurrent blocks via Gram-Schmidt on a
/// seeded Gaussian matrix.
pub fn orthogonal_init<R: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Array2<R> {
    let mut m = vec![vec![0.0f64; n]; n];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = standard_normal(rng);
        }
    }
    // Modified Gram-Schmidt over rows.
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| m[i][k] * m[j][k]).sum();
            for k in 0..n {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = (0..n).map(|k| m[i][k] * m[i][k]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            m[i][i] = 1.0;
        } else {
            for k in 0..n {
                m[i][k] /= norm;
            }
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| R::from_f64(m[i][j]))
}

pub fn zeros_init<R: Scalar>(rows: usize, cols: usize) -> Array2<R> {
    Array2::zeros((rows, cols))
}

/// Add seeded Gaussian noise of the given scale to every parameter entry.
/// Gradient probes use this to move zero-initialized parameters off
/// activation kinks.
pub fn jitter_params<R: Scalar>(store: &mut ParamStore<R>, scale: f64, seed: u64) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let values = &mut store.get_mut(id).values;
        for v in values.iter_mut() {
            *v = *v + R::from_f64(scale * standard_normal(&mut rng));
        }
    }
}

/// One standard-normal draw via Box-Muller, deterministic given the rng state.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
