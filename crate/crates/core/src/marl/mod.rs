//! Coalition-sampling actor-critic with Shapley credit, plus MADDPG and
//! independent-learner baselines.

mod agents;
mod buffer;
mod config;
mod policy;
mod trainer;

pub use agents::{
    actor_gradient, actor_update, baseline_actor_gradient, baseline_critic_update,
    baseline_update, critic_update, shapley_estimate, AgentSet, BaselineLosses, Learner,
};
pub use buffer::{ReplayBuffer, Transition};
pub use config::{Algorithm, CoalitionSampler, ShapleyMode, TrainerConfig};
pub use policy::{masked_joint_input, masked_view, sample_coalition, select_action, softmax};
pub use trainer::{rollout, EpisodeMetrics, StepRecord, Trainer, UpdateOutcome};
