//! Lambda-mixed n-step value targets.

use crate::numerics::graph::Var;
use crate::numerics::scalar::Scalar;

/// Recursive lambda-return over an imagined trajectory:
///
/// `V_t = r_t + discount * c_t * ((1 - lambda) * v_{t+1} + lambda * V_{t+1})`
/// with `V_H = v_H`. Inputs are `B x 1` per step: `rewards` and `contins`
/// cover steps `0..H`, `values` covers `0..=H` (the bootstrap tail).
/// Returns `V_0..V_{H-1}`.
pub fn lambda_returns<'g, R: Scalar>(
    rewards: &[Var<'g, R>],
    values: &[Var<'g, R>],
    contins: &[Var<'g, R>],
    discount: f64,
    lambda: f64,
) -> Vec<Var<'g, R>> {
    let h = rewards.len();
    assert!(h >= 1, "horizon must be >= 1");
    assert_eq!(values.len(), h + 1, "values must include the bootstrap state");
    assert_eq!(contins.len(), h, "one continuation weight per transition");

    let mut v_next = values[h];
    let mut out = vec![None; h];
    for t in (0..h).rev() {
        let mix = values[t + 1].scale(1.0 - lambda) + v_next.scale(lambda);
        let v = rewards[t] + (contins[t] * mix).scale(discount);
        out[t] = Some(v);
        v_next = v;
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Straight-line oracle: the same target as an explicit weighted sum of
/// n-step returns, `V = (1-lambda) * sum_{n=1}^{H-1} lambda^{n-1} G_n
/// + lambda^{H-1} G_H`, with discounting gated by the continuation weights.
/// Used by tests; plain `f64`, no graph.
pub fn lambda_returns_brute(
    rewards: &[f64],
    values: &[f64],
    contins: &[f64],
    discount: f64,
    lambda: f64,
) -> Vec<f64> {
    let h = rewards.len();
    let mut out = Vec::with_capacity(h);
    for t in 0..h {
        let steps_left = h - t;
        let mut total = 0.0;
        for n in 1..=steps_left {
            // n-step return from t: rewards t..t+n-1, bootstrap at t+n.
            let mut g = 0.0;
            let mut disc = 1.0;
            for j in 0..n {
                g += disc * rewards[t + j];
                disc *= discount * contins[t + j];
            }
            g += disc * values[t + n];
            let weight = if n == steps_left {
                lambda.powi((n - 1) as i32)
            } else {
                (1.0 - lambda) * lambda.powi((n - 1) as i32)
            };
            total += weight * g;
        }
        out.push(total);
    }
    out
}
