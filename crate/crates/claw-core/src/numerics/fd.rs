//! Finite-difference gradient oracle.
//!
//! Central differences against the recorded reverse-mode gradients, parameter
//! entry by parameter entry. Loss builders must be deterministic given their
//! captured noise seed so that the two probe evaluations see identical noise.

use crate::error::{ClawError, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::param::ParamStore;
use crate::numerics::scalar::Scalar;

/// Per-parameter finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdEntry {
    pub path: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&FdEntry> {
        self.entries.iter().filter(|e| e.max_rel_err > self.tolerance).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Check reverse-mode gradients of `loss` against central differences.
///
/// `loss` is called repeatedly with perturbed copies of the store; it must
/// rebuild the full forward pass each time (frozen noise included).
pub fn fd_check<R, F>(
    store: &ParamStore<R>,
    loss: F,
    step: f64,
    tolerance: f64,
) -> Result<FdReport>
where
    R: Scalar,
    F: for<'g> Fn(&'g Graph<R>, &ParamStore<R>) -> Result<Var<'g, R>>,
{
    let eval = |s: &ParamStore<R>, path: &str| -> Result<f64> {
        let g = Graph::new();
        let l = loss(&g, s)?;
        let v = l.scalar_value();
        if !v.is_finite() {
            return Err(ClawError::Numerical(format!(
                "non-finite loss while probing parameter `{path}`"
            )));
        }
        Ok(v)
    };

    // Analytic gradients.
    let mut work = store.clone();
    work.zero_grads();
    {
        let g = Graph::new();
        let l = loss(&g, &work)?;
        if !l.scalar_value().is_finite() {
            return Err(ClawError::Numerical("non-finite loss at base point".into()));
        }
        g.backward(l, &mut work)?;
    }

    let mut entries = Vec::new();
    for id in store.ids().collect::<Vec<_>>() {
        let path = store.path(id).to_string();
        let n = store.values(id).len();
        let mut max_rel = 0.0f64;
        let mut worst = 0usize;
        for i in 0..n {
            let mut plus = work.clone();
            let mut minus = work.clone();
            {
                let v = plus.get_mut(id).values.as_slice_mut().unwrap();
                v[i] = v[i] + R::from_f64(step);
            }
            {
                let v = minus.get_mut(id).values.as_slice_mut().unwrap();
                v[i] = v[i] - R::from_f64(step);
            }
            let fd = (eval(&plus, &path)? - eval(&minus, &path)?) / (2.0 * step);
            let an = work.grad(id).as_slice().unwrap()[i].as_f64();
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
                worst = i;
            }
        }
        entries.push(FdEntry { path, max_rel_err: max_rel, worst_index: worst });
    }
    Ok(FdReport { entries, tolerance })
}
