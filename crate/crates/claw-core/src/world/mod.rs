//! The recurrent latent-action state-space model: networks, posterior and
//! imagination rollouts, and the model training objective.

pub mod heads;
pub mod loss;
pub mod model;
pub mod rollout;
pub mod train;

pub use loss::{ModelMetrics, ModelTrace, StepTrace};
pub use model::{
    observe_step_arrays, Belief, BeliefState, ModelConfig, ModelVariant, ModelVars, WorldModel,
};
pub use rollout::{posterior_rollout, PosteriorRollout};
pub use train::{train_model, train_model_step, ModelTrainConfig};
