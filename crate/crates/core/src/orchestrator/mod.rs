//! Episode loop, curriculum over capital mobility and round-robin group updates.

pub mod config;
pub mod rollout;
pub mod schedule;
pub mod train;

pub use config::{Role, TrainConfig};
pub use rollout::{random_actions, run_episode, run_from, run_from_observed, ActionMode, Agents, EpisodeOptions, EpisodeStats, GroupEpisodeStats};
pub use schedule::{curriculum_phi, select_target_group, Target};
pub use train::{EpisodeRecord, EvalRecord, Manifest, Trainer};
