//! Actor-critic agent in the latent action space.
//!
//! The policy emits a bounded value and the constraint map places it inside
//! the latent action prior's support box: `u = mu + u_hat * eps * sigma`,
//! so `|u - mu| <= eps * sigma` holds for every parameter setting, state and
//! seed. Two ablations relax this: an unconstrained Gaussian policy directly
//! over `u`, and a direct-action policy for the no-latent-action model.

pub mod returns;
pub mod train;

pub use returns::lambda_returns;
pub use train::{
    agent_train_epoch, agent_train_step, imagine_rollout, AgentMetrics, AgentTrainConfig,
    Rollout, TrainPart,
};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiagGaussian, TanhGaussian};
use crate::error::{ClawError, Result};
use crate::numerics::dense::{mlp_widths, Activation, DenseBlock, DenseVars};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::param::ParamStore;
use crate::numerics::scalar::Scalar;
use crate::seed::SeedTree;
use crate::world::heads::{GaussianHead, GaussianHeadVars};
use crate::world::model::{BeliefState, ModelConfig, ModelVariant, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PolicyKind {
    /// Bounded tanh-Gaussian policy mapped into the prior support box.
    #[serde(rename = "constrained")]
    Constrained { epsilon: f64 },
    /// Unbounded Gaussian directly over latent actions (no constraint map).
    #[serde(rename = "unconstrained")]
    Unconstrained,
    /// Tanh-Gaussian directly over environment actions; requires the
    /// no-latent-action model variant.
    #[serde(rename = "direct-action")]
    DirectAction,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: PolicyKind,
    pub policy_units: usize,
    pub policy_layers: usize,
    pub value_units: usize,
    pub value_layers: usize,
    pub horizon: usize,
    pub discount: f64,
    pub lambda: f64,
    pub entropy_scale: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: PolicyKind::Constrained { epsilon: 2.0 },
            policy_units: 256,
            policy_layers: 3,
            value_units: 256,
            value_layers: 3,
            horizon: 5,
            discount: 0.99,
            lambda: 0.95,
            entropy_scale: 0.01,
            learning_rate: 8e-5,
            grad_clip: 100.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, model_cfg: &ModelConfig) -> Result<()> {
        if self.horizon < 1 {
            return Err(ClawError::Config("imagination horizon must be >= 1".into()));
        }
        if !(0.0 < self.discount && self.discount <= 1.0)
            || !(0.0 < self.lambda && self.lambda <= 1.0)
        {
            return Err(ClawError::Config("discount and lambda must lie in (0, 1]".into()));
        }
        match self.kind {
            PolicyKind::Constrained { epsilon } => {
                if epsilon <= 0.0 {
                    return Err(ClawError::Config("constraint epsilon must be positive".into()));
                }
                if model_cfg.variant != ModelVariant::LatentAction {
                    return Err(ClawError::Config(
                        "constrained policy requires the latent-action model variant".into(),
                    ));
                }
            }
            PolicyKind::Unconstrained => {
                if model_cfg.variant != ModelVariant::LatentAction {
                    return Err(ClawError::Config(
                        "latent-space policy requires the latent-action model variant".into(),
                    ));
                }
            }
            PolicyKind::DirectAction => {
                if model_cfg.variant != ModelVariant::NoLatentAction {
                    return Err(ClawError::Config(
                        "direct-action policy requires the no-latent-action model variant".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Agent<R: Scalar> {
    pub cfg: AgentConfig,
    pub policy_store: ParamStore<R>,
    pub critic_store: ParamStore<R>,
    policy: GaussianHead,
    critics: [DenseBlock; 2],
    policy_out_dim: usize,
}

impl<R: Scalar> Agent<R> {
    pub fn new(cfg: AgentConfig, model_cfg: &ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate(model_cfg)?;
        let feat = model_cfg.feature_dim();
        let out_dim = match cfg.kind {
            PolicyKind::Constrained { .. } | PolicyKind::Unconstrained => model_cfg.latent_action,
            PolicyKind::DirectAction => model_cfg.action_dim,
        };
        let tree = SeedTree::new(init_seed);

        let mut policy_store = ParamStore::new();
        let policy = GaussianHead::new(
            &mut policy_store,
            &mut tree.rng("policy-init"),
            "agent/policy",
            feat,
            cfg.policy_units,
            cfg.policy_layers,
            out_dim,
        );

        let mut critic_store = ParamStore::new();
        let rng = &mut tree.rng("critic-init");
        let critics = [
            DenseBlock::new(
                &mut critic_store,
                rng,
                "agent/critic0",
                &mlp_widths(feat, cfg.value_units, cfg.value_layers, 1),
                Activation::Selu,
            ),
            DenseBlock::new(
                &mut critic_store,
                rng,
                "agent/critic1",
                &mlp_widths(feat, cfg.value_units, cfg.value_layers, 1),
                Activation::Selu,
            ),
        ];
        Ok(Agent { cfg, policy_store, critic_store, policy, critics, policy_out_dim: out_dim })
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self.cfg.kind {
            PolicyKind::Constrained { epsilon } => Some(epsilon),
            _ => None,
        }
    }

    pub fn mount<'g>(&self, g: &'g Graph<R>, part: TrainPart) -> AgentVars<'g, R> {
        let policy = self.policy.mount(g, &self.policy_store, part != TrainPart::Policy);
        let critics = [
            self.critics[0].mount(g, &self.critic_store, part != TrainPart::Critics),
            self.critics[1].mount(g, &self.critic_store, part != TrainPart::Critics),
        ];
        AgentVars { kind: self.cfg.kind, policy, critics, out_dim: self.policy_out_dim }
    }
}

/// An agent mounted into one graph.
pub struct AgentVars<'g, R: Scalar> {
    pub kind: PolicyKind,
    policy: GaussianHeadVars<'g, R>,
    critics: [DenseVars<'g, R>; 2],
    out_dim: usize,
}

/// Policy output for one state batch: the emitted value plus what is needed
/// for entropy estimation.
pub struct PolicySample<'g, R: Scalar> {
    /// Latent action `u` (or environment action for direct policies).
    pub output: Var<'g, R>,
    /// Single-sample entropy estimate (tanh policies) or closed form
    /// (Gaussian policy), `B x 1`.
    pub entropy: Var<'g, R>,
    /// Prior stats when the constraint map was applied.
    pub prior_mean: Option<Var<'g, R>>,
    pub prior_std: Option<Var<'g, R>>,
}

impl<'g, R: Scalar> AgentVars<'g, R> {
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// The raw bounded policy distribution at the given features.
    pub fn policy_dist(&self, features: Var<'g, R>) -> Result<DiagGaussian<'g, R>> {
        self.policy.apply(features)
    }

    /// Sample the policy and, for the constrained kind, apply the support
    /// map `u = mu + u_hat * eps * sigma` against the given prior.
    pub fn sample(
        &self,
        features: Var<'g, R>,
        prior: Option<&DiagGaussian<'g, R>>,
        rng: &mut ChaCha8Rng,
        deterministic: bool,
    ) -> Result<PolicySample<'g, R>> {
        let base = self.policy.apply(features)?;
        match self.kind {
            PolicyKind::Constrained { epsilon } => {
                let prior = prior.ok_or_else(|| {
                    ClawError::Usage("constrained policy sample needs the action prior".into())
                })?;
                let squashed = TanhGaussian::new(base);
                let (u_hat, entropy) = sample_tanh(&squashed, rng, deterministic)?;
                let u = prior.mean + u_hat * prior.std.scale(epsilon);
                Ok(PolicySample {
                    output: u,
                    entropy,
                    prior_mean: Some(prior.mean),
                    prior_std: Some(prior.std),
                })
            }
            PolicyKind::Unconstrained => {
                let u = if deterministic { base.mode() } else { base.rsample(rng) };
                Ok(PolicySample {
                    output: u,
                    entropy: base.entropy(),
                    prior_mean: None,
                    prior_std: None,
                })
            }
            PolicyKind::DirectAction => {
                let squashed = TanhGaussian::new(base);
                let (a, entropy) = sample_tanh(&squashed, rng, deterministic)?;
                Ok(PolicySample { output: a, entropy, prior_mean: None, prior_std: None })
            }
        }
    }

    pub fn critic_values(&self, features: Var<'g, R>) -> Result<[Var<'g, R>; 2]> {
        Ok([self.critics[0].apply(features)?, self.critics[1].apply(features)?])
    }

    /// Anti-overestimation composition: elementwise min of the twin critics.
    pub fn min_value(&self, features: Var<'g, R>) -> Result<Var<'g, R>> {
        let [a, b] = self.critic_values(features)?;
        Ok(a.min(b))
    }
}

fn sample_tanh<'g, R: Scalar>(
    dist: &TanhGaussian<'g, R>,
    rng: &mut ChaCha8Rng,
    deterministic: bool,
) -> Result<(Var<'g, R>, Var<'g, R>)> {
    if deterministic {
        let m = dist.mode();
        // Entropy estimated at the mode's pre-squash point.
        let entropy = -dist.log_prob_from_pre(dist.base.mean);
        Ok((m, entropy))
    } else {
        let (x, pre) = dist.rsample(rng);
        Ok((x, -dist.log_prob_from_pre(pre)))
    }
}

/// Action selection mode for deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mode,
}

/// Diagnostics emitted alongside each environment action.
#[derive(Debug, Clone)]
pub struct ActDiag {
    pub u: Array2<f64>,
    pub prior_mean: Option<Array2<f64>>,
    pub prior_std: Option<Array2<f64>>,
}

/// Choose an environment action from the current belief (deployment loop).
/// `Mode` decodes deterministically (tanh of the policy mean, Beta mode);
/// `Sample` draws through every stochastic head.
pub fn act<R: Scalar>(
    model: &WorldModel<R>,
    agent: &Agent<R>,
    state: &BeliefState,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, ActDiag)> {
    let deterministic = mode == ActMode::Mode;
    let g: Graph<R> = Graph::new();
    let model_vars = model.mount(&g, true);
    let agent_vars = agent.mount(&g, TrainPart::Neither);
    let belief = model_vars.belief_from(&state.h, &state.s);
    let features = model_vars.features(belief);

    match agent.cfg.kind {
        PolicyKind::Constrained { .. } | PolicyKind::Unconstrained => {
            let prior = model_vars.action_prior(belief)?;
            let sample = agent_vars.sample(features, Some(&prior), rng, deterministic)?;
            let beta = model_vars.action_decoder(belief, sample.output)?;
            let x = if deterministic { beta.mode() } else { beta.rsample(rng) };
            let action = x.scale(2.0).add_const(-1.0);
            Ok((
                action.value_f64(),
                ActDiag {
                    u: sample.output.value_f64(),
                    prior_mean: Some(prior.mean.value_f64()),
                    prior_std: Some(prior.std.value_f64()),
                },
            ))
        }
        PolicyKind::DirectAction => {
            let sample = agent_vars.sample(features, None, rng, deterministic)?;
            Ok((
                sample.output.value_f64(),
                ActDiag { u: sample.output.value_f64(), prior_mean: None, prior_std: None },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::model::ModelVariant;

    fn tiny_model_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::defaults(3, 2);
        cfg.deter = 6;
        cfg.stoch = 4;
        cfg.embed = 4;
        cfg.latent_action = 3;
        cfg.hidden = 6;
        cfg.encoder_units = 6;
        cfg.encoder_layers = 1;
        cfg.decoder_units = 6;
        cfg.decoder_layers = 1;
        cfg.action_encoder_units = 6;
        cfg.action_encoder_layers = 1;
        cfg.action_decoder_units = 6;
        cfg.action_decoder_layers = 1;
        cfg.action_prior_units = 6;
        cfg.action_prior_layers = 1;
        cfg
    }

    fn tiny_agent_cfg(kind: PolicyKind) -> AgentConfig {
        AgentConfig {
            kind,
            policy_units: 6,
            policy_layers: 2,
            value_units: 6,
            value_layers: 2,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn constraint_map_center_and_boundary() {
        // u_hat = 0 -> u = mu; u_hat -> 1 with eps=2, mu=0.2, sigma=0.5 -> 1.2.
        let g: Graph<f64> = Graph::new();
        let mu = g.constant(ndarray::array![[0.2]]);
        let sigma = g.constant(ndarray::array![[0.5]]);
        let eps = 2.0;
        let at = |u_hat: f64| {
            let uh = g.constant(ndarray::array![[u_hat]]);
            (mu + uh * sigma.scale(eps)).scalar_value()
        };
        assert_eq!(at(0.0), 0.2);
        assert!((at(1.0) - 1.2).abs() < 1e-12);
        assert!((at(-1.0) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn constrained_outputs_respect_the_support_box() {
        use rand::SeedableRng;
        let model_cfg = tiny_model_cfg();
        let model: WorldModel<f64> = WorldModel::new(model_cfg, 2).unwrap();
        for eps in [0.5, 1.0, 2.0, 3.0, 10.0] {
            let agent: Agent<f64> = Agent::new(
                tiny_agent_cfg(PolicyKind::Constrained { epsilon: eps }),
                &model_cfg,
                4,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(eps.to_bits());
            let state = BeliefState {
                h: ndarray::Array2::from_shape_fn((16, 6), |(i, j)| {
                    ((i * 7 + j) as f64).sin()
                }),
                s: ndarray::Array2::from_shape_fn((16, 4), |(i, j)| {
                    ((i * 3 + j) as f64).cos()
                }),
            };
            for _ in 0..20 {
                let (_, diag) = act(&model, &agent, &state, ActMode::Sample, &mut rng).unwrap();
                let mu = diag.prior_mean.unwrap();
                let sd = diag.prior_std.unwrap();
                ndarray::Zip::from(&diag.u).and(&mu).and(&sd).for_each(|&u, &m, &s| {
                    assert!(
                        (u - m).abs() <= eps * s * (1.0 + 1e-12),
                        "violation: u={u} mu={m} sigma={s} eps={eps}"
                    );
                });
            }
        }
    }

    #[test]
    fn unconstrained_policy_escapes_the_box() {
        use rand::SeedableRng;
        let model_cfg = tiny_model_cfg();
        let model: WorldModel<f64> = WorldModel::new(model_cfg, 2).unwrap();
        let mut agent: Agent<f64> =
            Agent::new(tiny_agent_cfg(PolicyKind::Unconstrained), &model_cfg, 4).unwrap();
        // Widen the policy head output layer bias toward large std.
        let id = agent.policy_store.find("agent/policy/l2/b").unwrap();
        agent.policy_store.get_mut(id).values.mapv_inplace(|_| 4.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let state = BeliefState {
            h: ndarray::Array2::zeros((64, 6)),
            s: ndarray::Array2::zeros((64, 4)),
        };
        let mut escaped = 0usize;
        for _ in 0..160 {
            let (_, diag) = act(&model, &agent, &state, ActMode::Sample, &mut rng).unwrap();
            // Compare against a reference eps=2 box around the prior.
            let g: Graph<f64> = Graph::new();
            let vars = model.mount(&g, true);
            let belief = vars.belief_from(&state.h, &state.s);
            let prior = vars.action_prior(belief).unwrap();
            let mu = prior.mean.value_f64();
            let sd = prior.std.value_f64();
            ndarray::Zip::from(&diag.u).and(&mu).and(&sd).for_each(|&u, &m, &s| {
                if (u - m).abs() > 2.0 * s {
                    escaped += 1;
                }
            });
        }
        assert!(escaped > 0, "wide unconstrained policy never left the box");
    }

    #[test]
    fn kind_and_variant_mismatches_are_config_errors() {
        let mut no_latent = tiny_model_cfg();
        no_latent.variant = ModelVariant::NoLatentAction;
        let err = Agent::<f64>::new(
            tiny_agent_cfg(PolicyKind::Constrained { epsilon: 2.0 }),
            &no_latent,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ClawError::Config(_)));

        let latent = tiny_model_cfg();
        let err =
            Agent::<f64>::new(tiny_agent_cfg(PolicyKind::DirectAction), &latent, 0).unwrap_err();
        assert!(matches!(err, ClawError::Config(_)));
    }

    #[test]
    fn twin_critics_share_no_parameters() {
        let model_cfg = tiny_model_cfg();
        let agent: Agent<f64> = Agent::new(
            tiny_agent_cfg(PolicyKind::Constrained { epsilon: 2.0 }),
            &model_cfg,
            4,
        )
        .unwrap();
        let c0: Vec<_> = agent.critics[0].param_ids().collect();
        let c1: Vec<_> = agent.critics[1].param_ids().collect();
        for a in &c0 {
            assert!(!c1.contains(a));
        }
    }
}
