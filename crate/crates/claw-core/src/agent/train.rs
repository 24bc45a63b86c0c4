//! Agent training on imagined trajectories.
//!
//! Each step: sample dataset windows, run the posterior, pick one random
//! valid start state per row, imagine `H` steps with the current policy
//! through the frozen model, regress lambda-returns. Actor gradients
//! back-propagate through rewards, values and the dynamics; critic targets
//! are detached constants.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_windows, TrajectoryDataset};
use crate::error::{ClawError, Result};
use crate::metrics::CsvSink;
use crate::numerics::adam::Adam;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::scalar::Scalar;
use crate::seed::SeedTree;
use crate::world::model::{Belief, ModelVars, WorldModel};
use crate::world::rollout::posterior_rollout;

use super::returns::lambda_returns;
use super::{Agent, AgentVars, PolicyKind};

/// Which parameter group a mounted agent trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPart {
    Policy,
    Critics,
    Neither,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub window: usize,
    pub log_every: usize,
    /// Emit a value-tracking row every this many steps; 0 disables.
    pub value_track_every: usize,
}

impl Default for AgentTrainConfig {
    fn default() -> Self {
        AgentTrainConfig {
            steps: 2000,
            batch_size: 64,
            window: 50,
            log_every: 20,
            value_track_every: 0,
        }
    }
}

/// One imagined trajectory, all quantities `B x 1` per step unless noted.
pub struct Rollout<'g, R: Scalar> {
    /// Beliefs at steps `0..=H`.
    pub beliefs: Vec<Belief<'g, R>>,
    /// Predicted rewards at steps `0..H`.
    pub rewards: Vec<Var<'g, R>>,
    /// Continuation weights `1 - p(term)` at steps `0..H`.
    pub contins: Vec<Var<'g, R>>,
    /// Min-critic values at steps `0..=H`.
    pub values: Vec<Var<'g, R>>,
    /// Policy entropy estimates at steps `0..H`.
    pub entropies: Vec<Var<'g, R>>,
    /// Emitted latent (or direct) actions at steps `0..H` (`B x out_dim`).
    pub outputs: Vec<Var<'g, R>>,
    /// Decoded environment actions at steps `0..H` (`B x D_a`).
    pub actions: Vec<Var<'g, R>>,
    /// Mean `|u - mu| / sigma` over the rollout, when the constraint map ran.
    pub support_utilization: Option<f64>,
}

/// Imagine `horizon` steps from `start` under the mounted model and agent.
pub fn imagine_rollout<'g, R: Scalar>(
    model_vars: &ModelVars<'g, R>,
    agent_vars: &AgentVars<'g, R>,
    start: Belief<'g, R>,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout<'g, R>> {
    if horizon < 1 {
        return Err(ClawError::Config("imagination horizon must be >= 1".into()));
    }
    let g = model_vars.graph();
    let one = g.scalar(1.0);
    let mut belief = start;
    let mut out = Rollout {
        beliefs: Vec::with_capacity(horizon + 1),
        rewards: Vec::with_capacity(horizon),
        contins: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon + 1),
        entropies: Vec::with_capacity(horizon),
        outputs: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        support_utilization: None,
    };
    let mut util_acc = 0.0;
    let mut util_n = 0usize;

    for _ in 0..horizon {
        let features = model_vars.features(belief);
        out.beliefs.push(belief);
        out.rewards.push(model_vars.reward_mean(belief)?);
        out.contins.push(one - model_vars.termination(belief)?.prob());
        out.values.push(agent_vars.min_value(features)?);

        let (sample, action, next) = match agent_vars.kind {
            PolicyKind::Constrained { .. } | PolicyKind::Unconstrained => {
                let prior = model_vars.action_prior(belief)?;
                let sample = agent_vars.sample(features, Some(&prior), rng, false)?;
                let (action, next) = model_vars.imagine_step(belief, sample.output, rng, false)?;
                (sample, action, next)
            }
            PolicyKind::DirectAction => {
                let sample = agent_vars.sample(features, None, rng, false)?;
                let action = sample.output;
                let next = model_vars.imagine_step_with_action(belief, action, rng, false)?;
                (sample, action, next)
            }
        };
        if let (Some(mu), Some(sd)) = (&sample.prior_mean, &sample.prior_std) {
            let u = sample.output.value_f64();
            let m = mu.value_f64();
            let s = sd.value_f64();
            ndarray::Zip::from(&u).and(&m).and(&s).for_each(|&u, &m, &s| {
                util_acc += (u - m).abs() / s;
                util_n += 1;
            });
        }
        out.entropies.push(sample.entropy);
        out.outputs.push(sample.output);
        out.actions.push(action);
        belief = next;
    }
    out.beliefs.push(belief);
    let last_features = model_vars.features(belief);
    out.values.push(agent_vars.min_value(last_features)?);
    if util_n > 0 {
        out.support_utilization = Some(util_acc / util_n as f64);
    }
    Ok(out)
}

/// Actor objective: maximize lambda-returns along the imagined trajectory,
/// weighted by the cumulative discounted continuation, plus an entropy bonus.
pub fn actor_loss<'g, R: Scalar>(
    rollout: &Rollout<'g, R>,
    returns: &[Var<'g, R>],
    discount: f64,
    entropy_scale: f64,
) -> Var<'g, R> {
    let g = rollout.rewards[0].graph();
    let h = returns.len();
    let batch = rollout.rewards[0].shape().0 as f64;

    let mut weight = g.constant(Array2::from_elem((rollout.rewards[0].shape().0, 1), R::one()));
    let mut value_sum = g.scalar(0.0);
    let mut entropy_sum = g.scalar(0.0);
    for t in 0..h {
        value_sum = value_sum + (weight * returns[t]).sum_all();
        entropy_sum = entropy_sum + rollout.entropies[t].sum_all();
        // Weights gate later steps by predicted termination; they are
        // treated as constants for the gradient.
        weight = (weight * rollout.contins[t].detach()).scale(discount);
    }
    let n = g.scalar(1.0 / (h as f64 * batch));
    -(value_sum * n) - (entropy_sum * n).scale(entropy_scale)
}

/// Critic regression against detached targets: mean over steps, batch and
/// both critics of `0.5 (v - V_target)^2`.
pub fn critic_loss<'g, R: Scalar>(
    g: &'g Graph<R>,
    agent_vars: &AgentVars<'g, R>,
    features: &[Array2<f64>],
    targets: &[Array2<f64>],
) -> Result<Var<'g, R>> {
    assert_eq!(features.len(), targets.len());
    let mut sum = g.scalar(0.0);
    let mut count = 0.0;
    for (f, target) in features.iter().zip(targets) {
        let fv = g.constant_f64(f);
        let tv = g.constant_f64(target);
        for v in agent_vars.critic_values(fv)? {
            sum = sum + (v - tv).square().scale(0.5).sum_all();
            count += target.len() as f64;
        }
    }
    Ok(sum.scale(1.0 / count.max(1.0)))
}

/// Per-step training metrics.
#[derive(Debug, Clone, Copy)]
pub struct AgentMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_value: f64,
    pub mean_return_estimate: f64,
    pub entropy: f64,
    pub support_utilization: f64,
}

impl AgentMetrics {
    pub const COLUMNS: [&'static str; 6] = [
        "actor_loss",
        "critic_loss",
        "mean_value",
        "mean_return_estimate",
        "entropy",
        "support_utilization",
    ];

    pub fn values(&self) -> Vec<f64> {
        vec![
            self.actor_loss,
            self.critic_loss,
            self.mean_value,
            self.mean_return_estimate,
            self.entropy,
            self.support_utilization,
        ]
    }
}

/// One actor + critic update. The model is mounted frozen: its parameters are
/// bit-unchanged afterwards.
pub fn agent_train_step<R: Scalar>(
    model: &WorldModel<R>,
    agent: &mut Agent<R>,
    opt_policy: &mut Adam<R>,
    opt_critic: &mut Adam<R>,
    dataset: &TrajectoryDataset,
    cfg: &AgentTrainConfig,
    seeds: &SeedTree,
    step: u64,
) -> Result<AgentMetrics> {
    let batch = sample_windows(
        dataset,
        cfg.batch_size,
        cfg.window,
        seeds.derive_indexed("agent-data", step),
    )?;
    let post = posterior_rollout(model, &batch, seeds.derive_indexed("agent-post-noise", step))?;
    let mut start_rng = seeds.rng_indexed("agent-start", step);
    let (h0, s0) = post.random_valid_states(&mut start_rng);

    // Actor pass: policy trainable, critics and model frozen.
    let g: Graph<R> = Graph::new();
    let model_vars = model.mount(&g, true);
    let agent_vars = agent.mount(&g, TrainPart::Policy);
    let start = model_vars.belief_from(&h0, &s0);
    let mut imagine_rng = seeds.rng_indexed("agent-imagine", step);
    let rollout = imagine_rollout(
        &model_vars,
        &agent_vars,
        start,
        agent.cfg.horizon,
        &mut imagine_rng,
    )?;
    let returns = lambda_returns(
        &rollout.rewards[..],
        &rollout.values[..],
        &rollout.contins[..],
        agent.cfg.discount,
        agent.cfg.lambda,
    );
    let a_loss = actor_loss(&rollout, &returns, agent.cfg.discount, agent.cfg.entropy_scale);
    if !a_loss.scalar_value().is_finite() {
        return Err(ClawError::Numerical(format!(
            "non-finite actor loss at step {step} (mean value {})",
            rollout.values[0].value_f64().mean().unwrap_or(f64::NAN)
        )));
    }

    // Extract detached features and targets before consuming the graph.
    let features: Vec<Array2<f64>> = rollout
        .beliefs
        .iter()
        .take(agent.cfg.horizon)
        .map(|b| {
            let h = b.h.value_f64();
            let s = b.s.value_f64();
            let mut f = Array2::zeros((h.nrows(), h.ncols() + s.ncols()));
            f.slice_mut(ndarray::s![.., ..h.ncols()]).assign(&h);
            f.slice_mut(ndarray::s![.., h.ncols()..]).assign(&s);
            f
        })
        .collect();
    let targets: Vec<Array2<f64>> = returns.iter().map(|v| v.value_f64()).collect();
    let metrics_value = mean_of(&rollout.values.iter().map(|v| v.value_f64()).collect::<Vec<_>>());
    let metrics_return = mean_of(&targets);
    let metrics_entropy =
        mean_of(&rollout.entropies.iter().map(|v| v.value_f64()).collect::<Vec<_>>());
    let actor_loss_value = a_loss.scalar_value();
    let support_utilization = rollout.support_utilization.unwrap_or(f64::NAN);

    agent.policy_store.zero_grads();
    g.backward(a_loss, &mut agent.policy_store)?;
    opt_policy.apply(&mut agent.policy_store)?;

    // Critic pass on detached states and targets.
    let g2: Graph<R> = Graph::new();
    let agent_vars2 = agent.mount(&g2, TrainPart::Critics);
    let c_loss = critic_loss(&g2, &agent_vars2, &features, &targets)?;
    let critic_loss_value = c_loss.scalar_value();
    agent.critic_store.zero_grads();
    g2.backward(c_loss, &mut agent.critic_store)?;
    opt_critic.apply(&mut agent.critic_store)?;

    Ok(AgentMetrics {
        actor_loss: actor_loss_value,
        critic_loss: critic_loss_value,
        mean_value: metrics_value,
        mean_return_estimate: metrics_return,
        entropy: metrics_entropy,
        support_utilization,
    })
}

/// Mean min-critic value over posterior beliefs of freshly sampled windows,
/// used for value-overestimation tracking.
pub fn mean_value_on_dataset<R: Scalar>(
    model: &WorldModel<R>,
    agent: &Agent<R>,
    dataset: &TrajectoryDataset,
    batch_size: usize,
    window: usize,
    seed: u64,
) -> Result<f64> {
    let batch = sample_windows(dataset, batch_size, window, seed)?;
    let post = posterior_rollout(model, &batch, seed ^ 0x5eed)?;
    let g: Graph<R> = Graph::new();
    let agent_vars = agent.mount(&g, TrainPart::Neither);
    let (b, k) = (batch.batch_size(), batch.window());
    let mut sum = 0.0;
    let mut n = 0.0f64;
    for t in 0..k {
        let mut feats = Array2::zeros((b, model.cfg.feature_dim()));
        for i in 0..b {
            for d in 0..model.cfg.deter {
                feats[[i, d]] = post.h[[i, t, d]];
            }
            for d in 0..model.cfg.stoch {
                feats[[i, model.cfg.deter + d]] = post.s[[i, t, d]];
            }
        }
        let v = agent_vars.min_value(g.constant_f64(&feats))?.value_f64();
        for i in 0..b {
            if post.mask[[i, t]] > 0.0 {
                sum += v[[i, 0]];
                n += 1.0;
            }
        }
    }
    Ok(sum / n.max(1.0))
}

/// Full agent training run with optional metric and value-tracking sinks.
pub fn agent_train_epoch<R: Scalar>(
    model: &WorldModel<R>,
    agent: &mut Agent<R>,
    dataset: &TrajectoryDataset,
    cfg: &AgentTrainConfig,
    seeds: &SeedTree,
    mut sink: Option<&mut CsvSink>,
    mut value_sink: Option<&mut CsvSink>,
) -> Result<AgentMetrics> {
    let clip = (agent.cfg.grad_clip > 0.0).then_some(agent.cfg.grad_clip);
    let mut opt_policy = Adam::new(&agent.policy_store, agent.cfg.learning_rate, clip);
    let mut opt_critic = Adam::new(&agent.critic_store, agent.cfg.learning_rate, clip);
    let mut last = None;
    for step in 0..cfg.steps {
        let metrics = agent_train_step(
            model,
            agent,
            &mut opt_policy,
            &mut opt_critic,
            dataset,
            cfg,
            seeds,
            step as u64,
        )?;
        if let Some(s) = sink.as_deref_mut() {
            if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
                let mut row = vec![step as f64];
                row.extend(metrics.values());
                s.row(&row)?;
            }
        }
        if cfg.value_track_every > 0
            && (step % cfg.value_track_every == 0 || step + 1 == cfg.steps)
        {
            if let Some(vs) = value_sink.as_deref_mut() {
                let v = mean_value_on_dataset(
                    model,
                    agent,
                    dataset,
                    cfg.batch_size,
                    cfg.window,
                    seeds.derive_indexed("value-track", step as u64),
                )?;
                vs.row(&[step as f64, v])?;
            }
        }
        last = Some(metrics);
    }
    if let Some(s) = sink.as_deref_mut() {
        s.flush()?;
    }
    if let Some(vs) = value_sink.as_deref_mut() {
        vs.flush()?;
    }
    Ok(last.expect("steps >= 1"))
}

fn mean_of(arrays: &[Array2<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0f64;
    for a in arrays {
        sum += a.sum();
        n += a.len() as f64;
    }
    sum / n.max(1.0)
}
