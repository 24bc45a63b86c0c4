//! The recurrent latent-action state-space model.
//!
//! Belief is a pair `(h, s)`: a deterministic recurrent state and a
//! stochastic latent sampled from the prior (imagination) or the posterior
//! (observation). The latent-action variant adds an action prior, an action
//! posterior and a Beta action decoder, so the model is generative over
//! joint observation-action sequences; the `NoLatentAction` variant is a
//! plain recurrent state-space model driven directly by environment actions.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_noise, BetaVector, BernoulliHead, DiagGaussian};
use crate::error::{ClawError, Result};
use crate::numerics::dense::{mlp_widths, Activation, DenseBlock, DenseVars};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::gru::{GruVars, RecurrentCell};
use crate::numerics::param::ParamStore;
use crate::numerics::scalar::Scalar;
use crate::seed::SeedTree;
use crate::world::heads::{BetaHead, BetaHeadVars, GaussianHead, GaussianHeadVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Joint generative model over observations and actions (the full model).
    #[serde(rename = "latent-action")]
    LatentAction,
    /// Plain recurrent state-space model; the transition consumes dataset or
    /// policy actions directly and no latent-action networks exist.
    #[serde(rename = "no-latent-action")]
    NoLatentAction,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub variant: ModelVariant,
    /// Deterministic state width.
    pub deter: usize,
    /// Stochastic state width.
    pub stoch: usize,
    /// Observation embedding width.
    pub embed: usize,
    /// Latent action width.
    pub latent_action: usize,
    /// Generic hidden width (transition pre-layer, state heads, reward and
    /// termination heads).
    pub hidden: usize,
    pub encoder_units: usize,
    pub encoder_layers: usize,
    pub decoder_units: usize,
    pub decoder_layers: usize,
    pub action_encoder_units: usize,
    pub action_encoder_layers: usize,
    pub action_decoder_units: usize,
    pub action_decoder_layers: usize,
    pub action_prior_units: usize,
    pub action_prior_layers: usize,
    /// Optional KL floor per term; 0 disables it.
    pub free_bits: f64,
}

impl ModelConfig {
    /// Reference hyperparameters for low-dimensional feature observations.
    pub fn defaults(obs_dim: usize, action_dim: usize) -> Self {
        ModelConfig {
            obs_dim,
            action_dim,
            variant: ModelVariant::LatentAction,
            deter: 200,
            stoch: 30,
            embed: 30,
            latent_action: 12,
            hidden: 200,
            encoder_units: 128,
            encoder_layers: 2,
            decoder_units: 128,
            decoder_layers: 2,
            action_encoder_units: 512,
            action_encoder_layers: 2,
            action_decoder_units: 512,
            action_decoder_layers: 2,
            action_prior_units: 256,
            action_prior_layers: 2,
            free_bits: 0.0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.deter + self.stoch
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.obs_dim,
            self.action_dim,
            self.deter,
            self.stoch,
            self.embed,
            self.hidden,
            self.encoder_units,
            self.decoder_units,
        ];
        if sizes.iter().any(|&s| s == 0) {
            return Err(ClawError::Config("model sizes must be positive".into()));
        }
        if self.variant == ModelVariant::LatentAction && self.latent_action == 0 {
            return Err(ClawError::Config("latent action size must be positive".into()));
        }
        Ok(())
    }
}

/// Latent-action networks, present only for [`ModelVariant::LatentAction`].
#[derive(Debug, Clone)]
struct ActionNets {
    prior: GaussianHead,
    posterior: GaussianHead,
    decoder: BetaHead,
}

#[derive(Debug, Clone)]
pub struct WorldModel<R: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<R>,
    embed: DenseBlock,
    pre_gru: DenseBlock,
    gru: RecurrentCell,
    prior_s: GaussianHead,
    post_s: GaussianHead,
    obs_dec: DenseBlock,
    reward: DenseBlock,
    term: DenseBlock,
    action: Option<ActionNets>,
}

impl<R: Scalar> WorldModel<R> {
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let rng = &mut SeedTree::new(init_seed).rng("model-init");
        let feat = cfg.feature_dim();

        let embed = DenseBlock::new(
            &mut store,
            rng,
            "model/embed",
            &mlp_widths(cfg.obs_dim, cfg.encoder_units, cfg.encoder_layers, cfg.embed),
            Activation::Selu,
        );
        let pre_gru = DenseBlock::new(
            &mut store,
            rng,
            "model/transition_in",
            &[cfg.stoch + cfg.action_dim, cfg.hidden],
            Activation::Linear,
        );
        let gru = RecurrentCell::new(&mut store, rng, "model/gru", cfg.hidden, cfg.deter);
        let prior_s =
            GaussianHead::new(&mut store, rng, "model/state_prior", cfg.deter, cfg.hidden, 1, cfg.stoch);
        let post_s = GaussianHead::new(
            &mut store,
            rng,
            "model/state_posterior",
            cfg.deter + cfg.embed,
            cfg.hidden,
            1,
            cfg.stoch,
        );
        let obs_dec = DenseBlock::new(
            &mut store,
            rng,
            "model/obs_decoder",
            &mlp_widths(feat, cfg.decoder_units, cfg.decoder_layers, cfg.obs_dim),
            Activation::Selu,
        );
        let reward = DenseBlock::new(
            &mut store,
            rng,
            "model/reward",
            &mlp_widths(feat, cfg.hidden, 2, 1),
            Activation::Selu,
        );
        let term = DenseBlock::new(
            &mut store,
            rng,
            "model/termination",
            &mlp_widths(feat, cfg.hidden, 2, 1),
            Activation::Selu,
        );
        let action = match cfg.variant {
            ModelVariant::LatentAction => Some(ActionNets {
                prior: GaussianHead::new(
                    &mut store,
                    rng,
                    "model/action_prior",
                    feat,
                    cfg.action_prior_units,
                    cfg.action_prior_layers,
                    cfg.latent_action,
                ),
                posterior: GaussianHead::new(
                    &mut store,
                    rng,
                    "model/action_posterior",
                    feat + cfg.action_dim,
                    cfg.action_encoder_units,
                    cfg.action_encoder_layers,
                    cfg.latent_action,
                ),
                decoder: BetaHead::new(
                    &mut store,
                    rng,
                    "model/action_decoder",
                    feat + cfg.latent_action,
                    cfg.action_decoder_units,
                    cfg.action_decoder_layers,
                    cfg.action_dim,
                ),
            }),
            ModelVariant::NoLatentAction => None,
        };

        Ok(WorldModel {
            cfg,
            store,
            embed,
            pre_gru,
            gru,
            prior_s,
            post_s,
            obs_dec,
            reward,
            term,
            action,
        })
    }

    pub fn has_latent_actions(&self) -> bool {
        self.action.is_some()
    }

    /// Mount all networks into a graph. `frozen` mounts parameters as
    /// constants (gradients flow through but are not accumulated), which is
    /// how agent training keeps the model bit-unchanged.
    pub fn mount<'g>(&self, g: &'g Graph<R>, frozen: bool) -> ModelVars<'g, R> {
        self.mount_with(g, &self.store, frozen)
    }

    /// Mount against an explicit store (finite-difference probes perturb a
    /// cloned store whose parameter ids match this model's).
    pub fn mount_with<'g>(
        &self,
        g: &'g Graph<R>,
        store: &ParamStore<R>,
        frozen: bool,
    ) -> ModelVars<'g, R> {
        ModelVars {
            cfg: self.cfg,
            g,
            embed: self.embed.mount(g, store, frozen),
            pre_gru: self.pre_gru.mount(g, store, frozen),
            gru: self.gru.mount(g, store, frozen),
            prior_s: self.prior_s.mount(g, store, frozen),
            post_s: self.post_s.mount(g, store, frozen),
            obs_dec: self.obs_dec.mount(g, store, frozen),
            reward: self.reward.mount(g, store, frozen),
            term: self.term.mount(g, store, frozen),
            action: self.action.as_ref().map(|a| ActionVars {
                prior: a.prior.mount(g, store, frozen),
                posterior: a.posterior.mount(g, store, frozen),
                decoder: a.decoder.mount(g, store, frozen),
            }),
        }
    }
}

struct ActionVars<'g, R: Scalar> {
    prior: GaussianHeadVars<'g, R>,
    posterior: GaussianHeadVars<'g, R>,
    decoder: BetaHeadVars<'g, R>,
}

/// Graph-level belief: deterministic `h` and stochastic `s`, both `B x dim`.
#[derive(Clone, Copy)]
pub struct Belief<'g, R: Scalar> {
    pub h: Var<'g, R>,
    pub s: Var<'g, R>,
}

pub struct ObserveOutcome<'g, R: Scalar> {
    pub posterior: DiagGaussian<'g, R>,
    pub prior: DiagGaussian<'g, R>,
    pub belief: Belief<'g, R>,
}

/// A world model mounted into one graph.
pub struct ModelVars<'g, R: Scalar> {
    pub cfg: ModelConfig,
    g: &'g Graph<R>,
    embed: DenseVars<'g, R>,
    pre_gru: DenseVars<'g, R>,
    gru: GruVars<'g, R>,
    prior_s: GaussianHeadVars<'g, R>,
    post_s: GaussianHeadVars<'g, R>,
    obs_dec: DenseVars<'g, R>,
    reward: DenseVars<'g, R>,
    term: DenseVars<'g, R>,
    action: Option<ActionVars<'g, R>>,
}

impl<'g, R: Scalar> ModelVars<'g, R> {
    pub fn graph(&self) -> &'g Graph<R> {
        self.g
    }

    pub fn initial_belief(&self, batch: usize) -> Belief<'g, R> {
        Belief {
            h: self.g.zeros(batch, self.cfg.deter),
            s: self.g.zeros(batch, self.cfg.stoch),
        }
    }

    pub fn belief_from(&self, h: &Array2<f64>, s: &Array2<f64>) -> Belief<'g, R> {
        Belief { h: self.g.constant_f64(h), s: self.g.constant_f64(s) }
    }

    pub fn features(&self, belief: Belief<'g, R>) -> Var<'g, R> {
        self.g.concat_cols(&[belief.h, belief.s])
    }

    /// Deterministic transition `h_t = f(h_{t-1}, s_{t-1}, a_{t-1})`.
    pub fn step_h(&self, prev: Belief<'g, R>, prev_action: Var<'g, R>) -> Result<Var<'g, R>> {
        let joined = self.g.concat_cols(&[prev.s, prev_action]);
        let pre = self.pre_gru.apply(joined)?.selu();
        self.gru.step(prev.h, pre)
    }

    pub fn embed_obs(&self, obs: Var<'g, R>) -> Result<Var<'g, R>> {
        self.embed.apply(obs)
    }

    pub fn state_prior(&self, h: Var<'g, R>) -> Result<DiagGaussian<'g, R>> {
        self.prior_s.apply(h)
    }

    pub fn state_posterior(&self, h: Var<'g, R>, embed: Var<'g, R>) -> Result<DiagGaussian<'g, R>> {
        self.post_s.apply(self.g.concat_cols(&[h, embed]))
    }

    /// Posterior update from one observation: advance `h`, read the prior
    /// from `h` alone, the posterior from `(h, embed(obs))`, and carry a
    /// posterior sample in the new belief.
    pub fn observe_step(
        &self,
        prev: Belief<'g, R>,
        prev_action: Var<'g, R>,
        obs: Var<'g, R>,
        noise: &Array2<f64>,
    ) -> Result<ObserveOutcome<'g, R>> {
        let h = self.step_h(prev, prev_action)?;
        let prior = self.state_prior(h)?;
        let posterior = self.state_posterior(h, self.embed_obs(obs)?)?;
        let s = posterior.rsample_with(noise);
        Ok(ObserveOutcome { posterior, prior, belief: Belief { h, s } })
    }

    /// `q(u | h, s, a)`: Gaussian over the latent action given a dataset
    /// action.
    pub fn action_posterior(
        &self,
        belief: Belief<'g, R>,
        action: Var<'g, R>,
    ) -> Result<DiagGaussian<'g, R>> {
        let nets = self.action_nets()?;
        nets.posterior.apply(self.g.concat_cols(&[belief.h, belief.s, action]))
    }

    /// `p(u | h, s)`: the latent action prior.
    pub fn action_prior(&self, belief: Belief<'g, R>) -> Result<DiagGaussian<'g, R>> {
        let nets = self.action_nets()?;
        nets.prior.apply(self.features(belief))
    }

    /// `p(a | h, s, u)` as a Beta over the `(0,1)` box; environment actions
    /// are the affine image `a = 2x - 1`.
    pub fn action_decoder(
        &self,
        belief: Belief<'g, R>,
        u: Var<'g, R>,
    ) -> Result<BetaVector<'g, R>> {
        let nets = self.action_nets()?;
        nets.decoder.apply(self.g.concat_cols(&[belief.h, belief.s, u]))
    }

    pub fn decode_obs_mean(&self, belief: Belief<'g, R>) -> Result<Var<'g, R>> {
        self.obs_dec.apply(self.features(belief))
    }

    pub fn reward_mean(&self, belief: Belief<'g, R>) -> Result<Var<'g, R>> {
        self.reward.apply(self.features(belief))
    }

    pub fn termination(&self, belief: Belief<'g, R>) -> Result<BernoulliHead<'g, R>> {
        Ok(BernoulliHead::new(self.term.apply(self.features(belief))?))
    }

    /// One imagination step of the latent-action model: decode an action from
    /// `u`, feed it to the transition, sample the next state from the prior.
    pub fn imagine_step(
        &self,
        belief: Belief<'g, R>,
        u: Var<'g, R>,
        rng: &mut ChaCha8Rng,
        deterministic: bool,
    ) -> Result<(Var<'g, R>, Belief<'g, R>)> {
        let beta = self.action_decoder(belief, u)?;
        let x = if deterministic { beta.mode() } else { beta.rsample(rng) };
        let action = x.scale(2.0).add_const(-1.0);
        let next = self.imagine_step_with_action(belief, action, rng, deterministic)?;
        Ok((action, next))
    }

    /// Prior transition driven by an explicit environment action (used by the
    /// no-latent-action variant and after decoding).
    pub fn imagine_step_with_action(
        &self,
        belief: Belief<'g, R>,
        action: Var<'g, R>,
        rng: &mut ChaCha8Rng,
        deterministic: bool,
    ) -> Result<Belief<'g, R>> {
        let h = self.step_h(belief, action)?;
        let prior = self.state_prior(h)?;
        let s = if deterministic {
            prior.mode()
        } else {
            let (b, d) = (h.shape().0, self.cfg.stoch);
            prior.rsample_with(&normal_noise(rng, b, d))
        };
        Ok(Belief { h, s })
    }

    fn action_nets(&self) -> Result<&ActionVars<'g, R>> {
        self.action.as_ref().ok_or_else(|| {
            ClawError::Config(
                "latent-action networks requested on a no-latent-action model".into(),
            )
        })
    }
}

/// Plain-array belief used outside graphs (evaluation, analysis).
#[derive(Debug, Clone)]
pub struct BeliefState {
    pub h: Array2<f64>,
    pub s: Array2<f64>,
}

impl BeliefState {
    pub fn zeros(batch: usize, cfg: &ModelConfig) -> Self {
        BeliefState { h: Array2::zeros((batch, cfg.deter)), s: Array2::zeros((batch, cfg.stoch)) }
    }

    pub fn row(&self, i: usize) -> BeliefState {
        BeliefState {
            h: self.h.row(i).insert_axis(ndarray::Axis(0)).to_owned(),
            s: self.s.row(i).insert_axis(ndarray::Axis(0)).to_owned(),
        }
    }
}

/// Array-level posterior step for evaluation loops: builds a throwaway graph.
pub fn observe_step_arrays<R: Scalar>(
    model: &WorldModel<R>,
    state: &BeliefState,
    prev_action: &Array2<f64>,
    obs_normalized: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<BeliefState> {
    for (name, arr) in [("prev_action", prev_action), ("observation", obs_normalized)] {
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(ClawError::Numerical(format!("non-finite {name} in observe step")));
        }
    }
    let g: Graph<R> = Graph::new();
    let vars = model.mount(&g, true);
    let prev = vars.belief_from(&state.h, &state.s);
    let noise = normal_noise(rng, state.h.nrows(), model.cfg.stoch);
    let out = vars.observe_step(
        prev,
        g.constant_f64(prev_action),
        g.constant_f64(obs_normalized),
        &noise,
    )?;
    Ok(BeliefState { h: out.belief.h.value_f64(), s: out.belief.s.value_f64() })
}
