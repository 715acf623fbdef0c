//! Actor-critic learners: networks, sampling, advantage estimation and updates.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod gae;
pub mod nn;
pub mod policy;
pub mod update;

pub use adam::Adam;
pub use buffer::{build_batch, AgentId, RolloutBuffer, Transition};
pub use gae::{gae, gae_with_bootstrap};
pub use policy::{
    greedy_action, policy_forward, sample_action, sample_action_masked, value_forward, InitConfig,
    PolicyParams, SampledAction,
};
pub use update::{a2c_update, ppo_update, update, Algorithm, Batch, Learner, UpdateConfig, UpdateStats};
