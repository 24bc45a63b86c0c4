//! Posterior rollouts over window batches without gradient tracking.

use ndarray::{Array2, Array3, Axis};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::WindowBatch;
use crate::distributions::normal_noise;
use crate::error::Result;
use crate::numerics::graph::Graph;
use crate::numerics::scalar::Scalar;
use crate::world::model::{Belief, WorldModel};

/// Posterior beliefs for every step of a window batch.
#[derive(Debug, Clone)]
pub struct PosteriorRollout {
    pub h: Array3<f64>, // B x K x deter
    pub s: Array3<f64>, // B x K x stoch
    pub mask: Array2<f64>,
}

impl PosteriorRollout {
    /// Pick one valid step per row, uniformly; returns `(h, s)` rows stacked
    /// into `B x dim` arrays. Every window has at least one valid step.
    pub fn random_valid_states(&self, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
        use rand::Rng;
        let (b, k) = (self.h.shape()[0], self.h.shape()[1]);
        let mut h = Array2::zeros((b, self.h.shape()[2]));
        let mut s = Array2::zeros((b, self.s.shape()[2]));
        for i in 0..b {
            let valid: Vec<usize> = (0..k).filter(|&t| self.mask[[i, t]] > 0.0).collect();
            let t = valid[rng.random_range(0..valid.len())];
            h.row_mut(i).assign(&self.h.index_axis(Axis(0), i).index_axis(Axis(0), t));
            s.row_mut(i).assign(&self.s.index_axis(Axis(0), i).index_axis(Axis(0), t));
        }
        (h, s)
    }
}

/// Run the posterior over every window step. Mask gating matches the model
/// loss: padded steps keep the previous (zero) belief.
pub fn posterior_rollout<R: Scalar>(
    model: &WorldModel<R>,
    batch: &WindowBatch,
    noise_seed: u64,
) -> Result<PosteriorRollout> {
    let g: Graph<R> = Graph::new();
    let vars = model.mount(&g, true);
    let (b, k) = (batch.batch_size(), batch.window());
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let one = g.scalar(1.0);

    let mut out = PosteriorRollout {
        h: Array3::zeros((b, k, model.cfg.deter)),
        s: Array3::zeros((b, k, model.cfg.stoch)),
        mask: batch.mask.clone(),
    };

    let mut belief = vars.initial_belief(b);
    for t in 0..k {
        let mask = batch.mask_at(t);
        let m = g.constant_f64(&mask);
        let prev_act = if t == 0 {
            Array2::zeros((b, model.cfg.action_dim))
        } else {
            let mut a = batch.actions_at(t - 1);
            let pm = batch.mask_at(t - 1);
            for (i, mut row) in a.rows_mut().into_iter().enumerate() {
                if pm[[i, 0]] == 0.0 {
                    row.fill(0.0);
                }
            }
            a
        };
        let h_raw = vars.step_h(belief, g.constant_f64(&prev_act))?;
        let h = m * h_raw + (one - m) * belief.h;
        let posterior = vars.state_posterior(h, vars.embed_obs(g.constant_f64(&batch.obs_at(t)))?)?;
        let s_raw = posterior.rsample_with(&normal_noise(&mut rng, b, model.cfg.stoch));
        let s = m * s_raw + (one - m) * belief.s;
        belief = Belief { h, s };

        let hv = belief.h.value_f64();
        let sv = belief.s.value_f64();
        for i in 0..b {
            out.h.index_axis_mut(Axis(0), i).index_axis_mut(Axis(0), t).assign(&hv.row(i));
            out.s.index_axis_mut(Axis(0), i).index_axis_mut(Axis(0), t).assign(&sv.row(i));
        }
    }
    Ok(out)
}
