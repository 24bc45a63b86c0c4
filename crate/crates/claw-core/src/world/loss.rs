//! Model training objective: reconstruction and consistency terms summed over
//! a window, plus reward and termination likelihoods.
//!
//! Per valid step: `-log p(o|h,s) - log p(a|h,s,u) - log p(r|h,s)
//! - log p(term|h,s) + KL(post_s || prior_s) + KL(post_u || prior_u)`,
//! averaged over the batch's valid steps. Expectations use one
//! reparameterized sample. Padded (masked) steps contribute exactly zero and
//! the belief is mask-gated, so padding content never touches the state.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::WindowBatch;
use crate::distributions::{normal_noise, DiagGaussian};
use crate::error::{ClawError, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::param::ParamStore;
use crate::numerics::scalar::Scalar;
use crate::world::model::{Belief, ModelVariant, WorldModel};

const LN_2: f64 = std::f64::consts::LN_2;

/// Per-batch loss metrics, averaged over valid steps. The latent-action
/// terms are absent for the no-latent-action variant.
#[derive(Debug, Clone, Copy)]
pub struct ModelMetrics {
    pub loss: f64,
    pub obs_nll: f64,
    pub act_nll: Option<f64>,
    pub kl_state: f64,
    pub kl_action: Option<f64>,
    pub reward_nll: f64,
    pub term_nll: f64,
}

impl ModelMetrics {
    pub fn columns(latent_actions: bool) -> Vec<&'static str> {
        if latent_actions {
            vec!["loss", "obs_nll", "act_nll", "kl_state", "kl_action", "reward_nll", "term_nll"]
        } else {
            vec!["loss", "obs_nll", "kl_state", "reward_nll", "term_nll"]
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.loss, self.obs_nll];
        if let Some(a) = self.act_nll {
            v.push(a);
        }
        v.push(self.kl_state);
        if let Some(k) = self.kl_action {
            v.push(k);
        }
        v.extend([self.reward_nll, self.term_nll]);
        v
    }

    /// Metric keys and values as name/value pairs.
    pub fn as_pairs(&self) -> Vec<(&'static str, f64)> {
        Self::columns(self.act_nll.is_some()).into_iter().zip(self.values()).collect()
    }
}

/// Raw per-step quantities recorded for diagnostics and identity checks.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub mask: Array2<f64>,
    pub obs: Array2<f64>,
    pub action: Array2<f64>,
    pub reward: Array2<f64>,
    pub terminal: Array2<f64>,
    pub post_mean: Array2<f64>,
    pub post_std: Array2<f64>,
    pub prior_mean: Array2<f64>,
    pub prior_std: Array2<f64>,
    pub s: Array2<f64>,
    pub h: Array2<f64>,
    pub obs_dec_mean: Array2<f64>,
    pub reward_mean: Array2<f64>,
    pub term_logit: Array2<f64>,
    pub u_post_mean: Option<Array2<f64>>,
    pub u_post_std: Option<Array2<f64>>,
    pub u_prior_mean: Option<Array2<f64>>,
    pub u_prior_std: Option<Array2<f64>>,
    pub u: Option<Array2<f64>>,
    pub beta_alpha: Option<Array2<f64>>,
    pub beta_beta: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub steps: Vec<StepTrace>,
    pub valid_steps: f64,
}

impl<R: Scalar> WorldModel<R> {
    /// Build the model loss on `g` using the model's own parameters.
    pub fn loss<'g>(
        &self,
        g: &'g Graph<R>,
        batch: &WindowBatch,
        noise_seed: u64,
        want_trace: bool,
    ) -> Result<(Var<'g, R>, ModelMetrics, Option<ModelTrace>)> {
        self.loss_with_store(g, &self.store, batch, noise_seed, want_trace)
    }

    /// Same as [`WorldModel::loss`] with an explicit parameter store; used by
    /// finite-difference probes that perturb a cloned store.
    pub fn loss_with_store<'g>(
        &self,
        g: &'g Graph<R>,
        store: &ParamStore<R>,
        batch: &WindowBatch,
        noise_seed: u64,
        want_trace: bool,
    ) -> Result<(Var<'g, R>, ModelMetrics, Option<ModelTrace>)> {
        if batch.obs_dim() != self.cfg.obs_dim || batch.action_dim() != self.cfg.action_dim {
            return Err(ClawError::Config(format!(
                "batch dims ({}, {}) do not match model ({}, {})",
                batch.obs_dim(),
                batch.action_dim(),
                self.cfg.obs_dim,
                self.cfg.action_dim
            )));
        }
        let latent = self.cfg.variant == ModelVariant::LatentAction;
        let vars = self.mount_with(g, store, false);
        let (b, k) = (batch.batch_size(), batch.window());
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);

        let mut belief = vars.initial_belief(b);
        let one = g.scalar(1.0);
        let mut sum_obs_lp = g.scalar(0.0);
        let mut sum_act_lp = g.scalar(0.0);
        let mut sum_kl_s = g.scalar(0.0);
        let mut sum_kl_u = g.scalar(0.0);
        let mut sum_rew_lp = g.scalar(0.0);
        let mut sum_term_lp = g.scalar(0.0);
        let mut trace_steps = Vec::new();

        for t in 0..k {
            let mask_arr = batch.mask_at(t);
            let obs_arr = masked(&batch.obs_at(t), &mask_arr);
            let act_arr = masked(&batch.actions_at(t), &mask_arr);
            let prev_act_arr = if t == 0 {
                Array2::zeros((b, self.cfg.action_dim))
            } else {
                masked(&batch.actions_at(t - 1), &batch.mask_at(t - 1))
            };
            for (name, arr) in [("observations", &obs_arr), ("actions", &act_arr)] {
                if arr.iter().any(|v| !v.is_finite()) {
                    return Err(ClawError::Numerical(format!(
                        "non-finite {name} at window step {t}"
                    )));
                }
            }
            let m = g.constant_f64(&mask_arr);
            let obs = g.constant_f64(&obs_arr);
            let act = g.constant_f64(&act_arr);
            let prev_act = g.constant_f64(&prev_act_arr);

            // Mask-gated belief update: padded steps keep the previous state.
            let h_raw = vars.step_h(belief, prev_act)?;
            let h = m * h_raw + (one - m) * belief.h;
            let prior = vars.state_prior(h)?;
            let posterior = vars.state_posterior(h, vars.embed_obs(obs)?)?;
            let s_noise = normal_noise(&mut rng, b, self.cfg.stoch);
            let s_raw = posterior.rsample_with(&s_noise);
            let s = m * s_raw + (one - m) * belief.s;
            belief = Belief { h, s };

            let obs_mean = vars.decode_obs_mean(belief)?;
            let obs_lp = unit_gaussian_lp(obs_mean, obs);
            let reward_mean = vars.reward_mean(belief)?;
            let reward_lp = unit_gaussian_lp(reward_mean, g.constant_f64(&batch.rewards_at(t)));
            let term = vars.termination(belief)?;
            let term_lp = term.log_prob_data(&batch.terminals_at(t));
            let kl_s = free_bits(posterior.kl(&prior), self.cfg.free_bits);

            sum_obs_lp = sum_obs_lp + (obs_lp * m).sum_all();
            sum_rew_lp = sum_rew_lp + (reward_lp * m).sum_all();
            sum_term_lp = sum_term_lp + (term_lp * m).sum_all();
            sum_kl_s = sum_kl_s + (kl_s * m).sum_all();

            let mut latent_trace = (None, None, None, None, None, None, None);
            if latent {
                let u_noise = normal_noise(&mut rng, b, self.cfg.latent_action);
                let u_post = vars.action_posterior(belief, act)?;
                let u = u_post.rsample_with(&u_noise);
                let u_prior = vars.action_prior(belief)?;
                let kl_u = free_bits(u_post.kl(&u_prior), self.cfg.free_bits);
                let beta = vars.action_decoder(belief, u)?;
                // a = 2x - 1: log p(a) = log p_beta(x) - D_a ln 2.
                let x01 = act_arr.mapv(|a| (a + 1.0) / 2.0);
                let act_lp = beta.log_prob_data(&x01)
                    + g.scalar(-(self.cfg.action_dim as f64) * LN_2);
                sum_act_lp = sum_act_lp + (act_lp * m).sum_all();
                sum_kl_u = sum_kl_u + (kl_u * m).sum_all();
                if want_trace {
                    latent_trace = (
                        Some(u_post.mean.value_f64()),
                        Some(u_post.std.value_f64()),
                        Some(u_prior.mean.value_f64()),
                        Some(u_prior.std.value_f64()),
                        Some(u.value_f64()),
                        Some(beta.alpha.value_f64()),
                        Some(beta.beta.value_f64()),
                    );
                }
            }

            if want_trace {
                trace_steps.push(StepTrace {
                    mask: mask_arr,
                    obs: obs_arr,
                    action: act_arr,
                    reward: batch.rewards_at(t),
                    terminal: batch.terminals_at(t),
                    post_mean: posterior.mean.value_f64(),
                    post_std: posterior.std.value_f64(),
                    prior_mean: prior.mean.value_f64(),
                    prior_std: prior.std.value_f64(),
                    s: belief.s.value_f64(),
                    h: belief.h.value_f64(),
                    obs_dec_mean: obs_mean.value_f64(),
                    reward_mean: reward_mean.value_f64(),
                    term_logit: term.logit.value_f64(),
                    u_post_mean: latent_trace.0,
                    u_post_std: latent_trace.1,
                    u_prior_mean: latent_trace.2,
                    u_prior_std: latent_trace.3,
                    u: latent_trace.4,
                    beta_alpha: latent_trace.5,
                    beta_beta: latent_trace.6,
                });
            }
        }

        let valid = batch.valid_steps();
        let inv = g.scalar(1.0 / valid.max(1.0));
        let neg_lp = -(sum_obs_lp + sum_rew_lp + sum_term_lp)
            + sum_kl_s
            + if latent { sum_kl_u - sum_act_lp } else { g.scalar(0.0) };
        let loss = neg_lp * inv;

        let scale = 1.0 / valid.max(1.0);
        let metrics = ModelMetrics {
            loss: loss.scalar_value(),
            obs_nll: -sum_obs_lp.scalar_value() * scale,
            act_nll: latent.then(|| -sum_act_lp.scalar_value() * scale),
            kl_state: sum_kl_s.scalar_value() * scale,
            kl_action: latent.then(|| sum_kl_u.scalar_value() * scale),
            reward_nll: -sum_rew_lp.scalar_value() * scale,
            term_nll: -sum_term_lp.scalar_value() * scale,
        };
        if !metrics.loss.is_finite() {
            return Err(ClawError::Numerical(format!(
                "non-finite model loss; terms: {:?}",
                metrics
            )));
        }
        let trace = want_trace.then(|| ModelTrace { steps: trace_steps, valid_steps: valid });
        Ok((loss, metrics, trace))
    }
}

fn masked(data: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let mut out = data.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        if mask[[i, 0]] == 0.0 {
            row.fill(0.0);
        }
    }
    out
}

/// Log-density under a unit-variance Gaussian, summed over dims.
fn unit_gaussian_lp<'g, R: Scalar>(mean: Var<'g, R>, x: Var<'g, R>) -> Var<'g, R> {
    let g = mean.graph();
    let ones = g.constant(Array2::from_elem(mean.shape(), R::one()));
    DiagGaussian::new(mean, ones).log_prob(x)
}

fn free_bits<'g, R: Scalar>(kl: Var<'g, R>, floor: f64) -> Var<'g, R> {
    if floor > 0.0 {
        kl.clamp_const(floor, f64::INFINITY)
    } else {
        kl
    }
}
