//! Desk-scale environments, scripted behavior policies for offline dataset
//! generation, and the online evaluation loop.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{act, ActMode, Agent};
use crate::dataset::{DatasetMeta, Episode, TrajectoryDataset};
use crate::error::{ClawError, Result};
use crate::numerics::param::standard_normal;
use crate::numerics::scalar::Scalar;
use crate::seed::SeedTree;
use crate::world::model::{observe_step_arrays, BeliefState, WorldModel};

/// Point-mass in a 2-D box steered by bounded forces. Observations are a
/// fixed random linear projection of `(position, velocity)` to `obs_dim`
/// values with additive seeded noise. The reward is a shaped function of the
/// distance to a fixed goal, `exp(-4 d^2)`, in `(0, 1]`, co-observed with
/// each observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointMassConfig {
    pub obs_dim: usize,
    pub horizon: usize,
    pub obs_noise: f64,
    pub goal: [f64; 2],
    /// Seed of the fixed observation projection.
    pub projection_seed: u64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        PointMassConfig {
            obs_dim: 8,
            horizon: 100,
            obs_noise: 0.01,
            goal: [0.6, 0.45],
            projection_seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pub cfg: PointMassConfig,
    projection: Array2<f64>, // obs_dim x 4
}

/// Full simulation state; the dynamics are a pure function of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub t: usize,
}

pub struct StepResult {
    pub state: EnvState,
    pub observation: Array1<f64>,
    pub reward: f64,
    pub terminal: bool,
}

impl PointMassEnv {
    pub fn new(cfg: PointMassConfig) -> Self {
        let mut rng = SeedTree::new(cfg.projection_seed).rng("obs-projection");
        let scale = 1.0 / 2.0; // 1/sqrt(state dim)
        let projection = Array2::from_shape_simple_fn((cfg.obs_dim, 4), || {
            standard_normal(&mut rng) * scale
        });
        PointMassEnv { cfg, projection }
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> StepResult {
        let pos = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
        let state = EnvState { pos, vel: [0.0, 0.0], t: 0 };
        StepResult {
            observation: self.observe(&state, rng),
            reward: self.reward(&state),
            terminal: false,
            state,
        }
    }

    /// Deterministic dynamics given `(state, action)`; observation noise is
    /// the only stochastic element and comes from the caller's rng.
    pub fn step(&self, state: &EnvState, action: [f64; 2], rng: &mut ChaCha8Rng) -> StepResult {
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let mut vel = [0.0; 2];
        let mut pos = [0.0; 2];
        for d in 0..2 {
            vel[d] = 0.8 * state.vel[d] + 0.2 * a[d];
            pos[d] = (state.pos[d] + 0.15 * vel[d]).clamp(-1.0, 1.0);
        }
        let next = EnvState { pos, vel, t: state.t + 1 };
        StepResult {
            observation: self.observe(&next, rng),
            reward: self.reward(&next),
            terminal: false,
            state: next,
        }
    }

    fn observe(&self, state: &EnvState, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let s = [state.pos[0], state.pos[1], state.vel[0], state.vel[1]];
        Array1::from_shape_fn(self.cfg.obs_dim, |i| {
            let mut v = 0.0;
            for (j, sj) in s.iter().enumerate() {
                v += self.projection[[i, j]] * sj;
            }
            v + self.cfg.obs_noise * standard_normal(rng)
        })
    }

    fn reward(&self, state: &EnvState) -> f64 {
        let dx = state.pos[0] - self.cfg.goal[0];
        let dy = state.pos[1] - self.cfg.goal[1];
        (-4.0 * (dx * dx + dy * dy)).exp()
    }
}

/// Scripted behavior policies for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    /// PD controller to the goal.
    Expert,
    /// Expert with Gaussian action noise (sigma 0.3) and 20% random actions.
    Medium,
    /// Mixture of detuned noisy controllers, one per episode.
    Replay,
    /// Uniform random actions (reference policy).
    Random,
}

impl BehaviorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorKind::Expert => "expert",
            BehaviorKind::Medium => "medium",
            BehaviorKind::Replay => "replay",
            BehaviorKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(BehaviorKind::Expert),
            "medium" => Ok(BehaviorKind::Medium),
            "replay" => Ok(BehaviorKind::Replay),
            "random" => Ok(BehaviorKind::Random),
            _ => Err(ClawError::Usage(format!(
                "unknown behavior policy `{s}` (expert | medium | replay | random)"
            ))),
        }
    }
}

/// Replay tier: per-episode (gain scale, noise sigma) pairs mimicking
/// checkpoints of a controller during tuning.
const REPLAY_MIX: [(f64, f64); 4] = [(0.25, 0.5), (0.5, 0.4), (0.75, 0.3), (1.0, 0.25)];

fn pd_action(env: &PointMassEnv, state: &EnvState, gain_scale: f64) -> [f64; 2] {
    let (kp, kd) = (6.0 * gain_scale, 3.0 * gain_scale);
    [
        (kp * (env.cfg.goal[0] - state.pos[0]) - kd * state.vel[0]).clamp(-1.0, 1.0),
        (kp * (env.cfg.goal[1] - state.pos[1]) - kd * state.vel[1]).clamp(-1.0, 1.0),
    ]
}

fn behavior_action(
    env: &PointMassEnv,
    kind: BehaviorKind,
    state: &EnvState,
    episode: usize,
    rng: &mut ChaCha8Rng,
) -> [f64; 2] {
    match kind {
        BehaviorKind::Expert => pd_action(env, state, 1.0),
        BehaviorKind::Medium => {
            // Draw order is fixed so trajectories replay exactly per seed.
            let flip: f64 = rng.random();
            let (n0, n1) = (standard_normal(rng), standard_normal(rng));
            let (u0, u1) = (rng.random::<f64>(), rng.random::<f64>());
            if flip < 0.2 {
                [u0 * 2.0 - 1.0, u1 * 2.0 - 1.0]
            } else {
                let a = pd_action(env, state, 1.0);
                [
                    (a[0] + 0.3 * n0).clamp(-1.0, 1.0),
                    (a[1] + 0.3 * n1).clamp(-1.0, 1.0),
                ]
            }
        }
        BehaviorKind::Replay => {
            let (gain, sigma) = REPLAY_MIX[episode % REPLAY_MIX.len()];
            let (n0, n1) = (standard_normal(rng), standard_normal(rng));
            let a = pd_action(env, state, gain);
            [
                (a[0] + sigma * n0).clamp(-1.0, 1.0),
                (a[1] + sigma * n1).clamp(-1.0, 1.0),
            ]
        }
        BehaviorKind::Random => [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0],
    }
}

/// Roll episodes of a scripted policy into a dataset. Reproducible per seed.
pub fn generate_dataset(
    env: &PointMassEnv,
    kind: BehaviorKind,
    episodes: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    if episodes == 0 {
        return Err(ClawError::Config("need at least one episode".into()));
    }
    let tree = SeedTree::new(seed);
    let mut eps = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = tree.rng_indexed("episode", e as u64);
        let t_max = env.cfg.horizon;
        let mut obs = Array2::zeros((t_max, env.cfg.obs_dim));
        let mut actions = Array2::zeros((t_max, 2));
        let mut rewards = Array1::zeros(t_max);
        let mut reset = env.reset(&mut rng);
        for t in 0..t_max {
            for d in 0..env.cfg.obs_dim {
                obs[[t, d]] = reset.observation[d] as f32;
            }
            rewards[t] = reset.reward as f32;
            let a = behavior_action(env, kind, &reset.state, e, &mut rng);
            actions[[t, 0]] = a[0] as f32;
            actions[[t, 1]] = a[1] as f32;
            reset = env.step(&reset.state, a, &mut rng);
        }
        eps.push(Episode { observations: obs, actions, rewards, terminals: vec![false; t_max] });
    }
    let mean_return =
        eps.iter().map(Episode::total_reward).sum::<f64>() / episodes as f64;
    TrajectoryDataset::from_episodes(
        eps,
        DatasetMeta {
            name: format!("pointmass-{}", kind.as_str()),
            seed,
            generator: format!("pointmass {} policy, {episodes} episodes", kind.as_str()),
            mean_return,
        },
    )
}

/// Mean return of a scripted policy, used for normalization references.
pub fn scripted_mean_return(
    env: &PointMassEnv,
    kind: BehaviorKind,
    episodes: usize,
    seed: u64,
) -> f64 {
    let tree = SeedTree::new(seed);
    let mut total = 0.0;
    for e in 0..episodes {
        let mut rng = tree.rng_indexed("episode", e as u64);
        let mut step = env.reset(&mut rng);
        let mut ret = step.reward;
        for _ in 0..env.cfg.horizon - 1 {
            let a = behavior_action(env, kind, &step.state, e, &mut rng);
            step = env.step(&step.state, a, &mut rng);
            ret += step.reward;
        }
        total += ret;
    }
    total / episodes as f64
}

/// Random and expert reference returns for normalization, at a fixed
/// evaluation protocol (50 episodes, dedicated seed stream).
pub fn reference_returns(env: &PointMassEnv) -> (f64, f64) {
    let random = scripted_mean_return(env, BehaviorKind::Random, 50, 0xB00);
    let expert = scripted_mean_return(env, BehaviorKind::Expert, 50, 0xB00);
    (random, expert)
}

/// Normalized score: `100 * (raw - random) / (expert - random)`.
pub fn normalized_return(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if !(expert_ref > random_ref) {
        return Err(ClawError::Config(format!(
            "degenerate normalization references: random {random_ref}, expert {expert_ref}"
        )));
    }
    Ok(100.0 * (raw - random_ref) / (expert_ref - random_ref))
}

/// Evaluation summary over episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub per_episode: Vec<f64>,
    pub normalized: f64,
}

/// Run the deployed agent: at every step the model ingests the previous
/// action and the new observation, then the policy decodes an action through
/// the generative action decoder. The belief resets at episode starts (zero
/// state, zero previous action).
pub fn evaluate<R: Scalar>(
    env: &PointMassEnv,
    model: &WorldModel<R>,
    agent: &Agent<R>,
    dataset_stats: (&Array1<f64>, &Array1<f64>),
    episodes: usize,
    seed: u64,
    mode: ActMode,
) -> Result<EvalReport> {
    let (obs_mean, obs_std) = dataset_stats;
    let tree = SeedTree::new(seed);
    let mut per_episode = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = tree.rng_indexed("eval-episode", e as u64);
        let mut belief = BeliefState::zeros(1, &model.cfg);
        let mut prev_action = Array2::zeros((1, env.action_dim()));
        let mut step = env.reset(&mut rng);
        let mut ret = step.reward;
        for _ in 0..env.cfg.horizon - 1 {
            let obs = normalize_row(&step.observation, obs_mean, obs_std);
            belief = observe_step_arrays(model, &belief, &prev_action, &obs, &mut rng)?;
            let (a, _) = act(model, agent, &belief, mode, &mut rng)?;
            let action = [a[[0, 0]], a[[0, 1]]];
            step = env.step(&step.state, action, &mut rng);
            ret += step.reward;
            prev_action = a;
        }
        per_episode.push(ret);
    }
    let mean = per_episode.iter().sum::<f64>() / episodes.max(1) as f64;
    let var = per_episode.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
        / episodes.max(1) as f64;
    let (random_ref, expert_ref) = reference_returns(env);
    Ok(EvalReport {
        mean_return: mean,
        std_return: var.sqrt(),
        normalized: normalized_return(mean, random_ref, expert_ref)?,
        per_episode,
    })
}

fn normalize_row(obs: &Array1<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((1, obs.len()), |(_, d)| (obs[d] - mean[d]) / std[d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dynamics_replay_bitwise_from_the_same_state_and_seed() {
        let env = PointMassEnv::new(PointMassConfig::default());
        let actions = [[0.5, -0.3], [1.0, 1.0], [-0.2, 0.8]];
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut s = env.reset(&mut rng);
            let mut trace = vec![];
            for a in actions {
                s = env.step(&s.state, a, &mut rng);
                trace.push((s.state, s.reward.to_bits(), s.observation.clone()));
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dataset_generation_is_reproducible_and_bounded() {
        let env = PointMassEnv::new(PointMassConfig::default());
        let a = generate_dataset(&env, BehaviorKind::Medium, 2, 5).unwrap();
        let b = generate_dataset(&env, BehaviorKind::Medium, 2, 5).unwrap();
        assert_eq!(a.episodes, b.episodes);
        for ep in &a.episodes {
            assert!(ep.actions.iter().all(|&v| (-1.0..=1.0).contains(&v)));
            assert!(ep.rewards.iter().all(|&r| r > 0.0 && r <= 1.0));
        }
    }

    #[test]
    fn behavior_tiers_are_ordered() {
        let env = PointMassEnv::new(PointMassConfig::default());
        let expert = scripted_mean_return(&env, BehaviorKind::Expert, 20, 3);
        let medium = scripted_mean_return(&env, BehaviorKind::Medium, 20, 3);
        let replay = scripted_mean_return(&env, BehaviorKind::Replay, 20, 3);
        let random = scripted_mean_return(&env, BehaviorKind::Random, 20, 3);
        assert!(
            expert > medium && medium > replay && replay > random,
            "expert {expert} medium {medium} replay {replay} random {random}"
        );
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalized_return(10.0, 2.0, 10.0).unwrap(), 100.0);
        assert_eq!(normalized_return(2.0, 2.0, 10.0).unwrap(), 0.0);
        assert_eq!(normalized_return(6.0, 2.0, 10.0).unwrap(), 50.0);
        assert!(normalized_return(5.0, 3.0, 3.0).is_err());
    }
}
