use serde::{Deserialize, Serialize};

use crate::econ::EconParams;
use crate::error::{Error, Result};
use crate::learners::{Algorithm, InitConfig, UpdateConfig};
use crate::world::{WorldConfig, DEFAULT_ETA_MAX};

/// Everything a training run needs, as one flat record.
///
/// Learning rates left unset take the defaults of the chosen algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub groups: usize,
    pub households: usize,
    pub episode_length: usize,
    /// Governments choose a new action every `n_gov` steps.
    pub n_gov: usize,
    pub episodes: usize,
    pub curriculum_enabled: bool,
    pub sequential_update_enabled: bool,
    pub curriculum_rate: f64,
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub gov_actor_lr: Option<f64>,
    pub gov_critic_lr: Option<f64>,
    pub clip_eps: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub hidden: usize,
    pub normalize_advantages: bool,
    /// Zero disables gradient-norm clipping.
    pub max_grad_norm: f64,
    pub output_gain: f64,
    pub initial_log_std: f64,
    pub seed: u64,
    pub eval_episodes: usize,
    /// Zero disables periodic evaluation.
    pub eval_interval: usize,
    pub two_phase_enabled: bool,

    pub alpha: f64,
    pub r_interest: f64,
    pub rho_e: f64,
    pub sigma_e: f64,
    pub beta: f64,
    pub theta_crra: f64,
    pub gamma_labor: f64,
    pub tau_s: f64,
    pub eta_max: f64,
    pub transfer_enabled: bool,
    pub initial_wealth_mean: f64,
    pub initial_wealth_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let econ = EconParams::default();
        let world = WorldConfig::default();
        Self {
            groups: world.groups,
            households: world.households,
            episode_length: world.episode_length,
            n_gov: 10,
            episodes: 2000,
            curriculum_enabled: true,
            sequential_update_enabled: true,
            curriculum_rate: 0.001,
            algorithm: Algorithm::Ppo,
            gamma: 0.95,
            gae_lambda: 0.95,
            actor_lr: None,
            critic_lr: None,
            gov_actor_lr: None,
            gov_critic_lr: None,
            clip_eps: 0.2,
            ppo_epochs: 5,
            minibatches: 4,
            hidden: 64,
            normalize_advantages: true,
            max_grad_norm: 10.0,
            output_gain: 0.01,
            initial_log_std: -0.5,
            seed: 0,
            eval_episodes: 10,
            eval_interval: 50,
            two_phase_enabled: false,
            alpha: econ.alpha,
            r_interest: econ.r_interest,
            rho_e: econ.rho_e,
            sigma_e: econ.sigma_e,
            beta: econ.beta,
            theta_crra: econ.theta_crra,
            gamma_labor: econ.gamma_labor,
            tau_s: econ.tau_s,
            eta_max: DEFAULT_ETA_MAX,
            transfer_enabled: world.transfer_enabled,
            initial_wealth_mean: world.initial_wealth_mean,
            initial_wealth_sigma: world.initial_wealth_sigma,
        }
    }
}

/// Default learning rates `(household actor, household critic, gov actor, gov critic)`.
pub fn default_learning_rates(algorithm: Algorithm) -> (f64, f64, f64, f64) {
    match algorithm {
        Algorithm::Ppo => (3e-5, 5e-3, 3e-5, 3e-5),
        Algorithm::A2c => (1e-7, 3e-7, 1e-7, 1e-7),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Government,
    Household,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_gov == 0 {
            return bad("n_gov must be at least 1".into());
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.curriculum_rate >= 0.0 && self.curriculum_rate.is_finite()) {
            return bad("curriculum_rate must be a non-negative number".into());
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("gov_actor_lr", self.gov_actor_lr),
            ("gov_critic_lr", self.gov_critic_lr),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive".into());
        }
        if self.ppo_epochs == 0 || self.minibatches == 0 || self.hidden == 0 {
            return bad("ppo_epochs, minibatches and hidden must be at least 1".into());
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm must be non-negative".into());
        }
        if !self.output_gain.is_finite() || !self.initial_log_std.is_finite() {
            return bad("output_gain and initial_log_std must be finite".into());
        }
        self.world_config().validate()
    }

    pub fn econ(&self) -> EconParams {
        EconParams {
            alpha: self.alpha,
            r_interest: self.r_interest,
            rho_e: self.rho_e,
            sigma_e: self.sigma_e,
            beta: self.beta,
            theta_crra: self.theta_crra,
            gamma_labor: self.gamma_labor,
            tau_s: self.tau_s,
        }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            groups: self.groups,
            households: self.households,
            episode_length: self.episode_length,
            econ: self.econ(),
            eta_max: self.eta_max,
            transfer_enabled: self.transfer_enabled,
            initial_wealth_mean: self.initial_wealth_mean,
            initial_wealth_sigma: self.initial_wealth_sigma,
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            actor_output_gain: self.output_gain,
            critic_output_gain: 1.0,
            initial_log_std: self.initial_log_std,
        }
    }

    pub fn learning_rates(&self, role: Role) -> (f64, f64) {
        let (a, c, ga, gc) = default_learning_rates(self.algorithm);
        match role {
            Role::Household => (self.actor_lr.unwrap_or(a), self.critic_lr.unwrap_or(c)),
            Role::Government => (self.gov_actor_lr.unwrap_or(ga), self.gov_critic_lr.unwrap_or(gc)),
        }
    }

    pub fn update_config(&self, role: Role) -> UpdateConfig {
        let (actor_lr, critic_lr) = self.learning_rates(role);
        UpdateConfig {
            algorithm: self.algorithm,
            clip_eps: self.clip_eps,
            actor_lr,
            critic_lr,
            epochs: self.ppo_epochs,
            minibatches: self.minibatches,
            normalize_advantages: self.normalize_advantages,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            update_critic: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.groups, c.households, c.episode_length, c.n_gov), (2, 300, 300, 10));
        assert_eq!(c.gamma, 0.95);
        assert_eq!(c.learning_rates(Role::Household), (3e-5, 5e-3));
    }

    #[test]
    fn a2c_rates() {
        let c = TrainConfig {
            algorithm: Algorithm::A2c,
            gov_critic_lr: Some(2e-7),
            ..Default::default()
        };
        assert_eq!(c.learning_rates(Role::Household), (1e-7, 3e-7));
        assert_eq!(c.learning_rates(Role::Government), (1e-7, 2e-7));
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            TrainConfig {
                gamma: 2.0,
                ..Default::default()
            },
            TrainConfig {
                n_gov: 0,
                ..Default::default()
            },
            TrainConfig {
                groups: 0,
                ..Default::default()
            },
            TrainConfig {
                actor_lr: Some(-1.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
