//! Actor and critic parameters, bounded Gaussian action sampling.
//!
//! The actor outputs a per-dimension mean; the log standard deviation is a
//! free parameter vector independent of the observation. A Gaussian draw
//! `u` is squashed with `tanh` onto `(-1, 1)` and the log-density carries the
//! change-of-variables correction.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{self, MlpShape};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    /// Actor MLP followed by `action_dim` log-std entries.
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Scale of the actor's output layer relative to a unit-variance init.
    pub actor_output_gain: f64,
    pub critic_output_gain: f64,
    pub initial_log_std: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            actor_output_gain: 0.01,
            critic_output_gain: 1.0,
            initial_log_std: -0.5,
        }
    }
}

fn init_mlp(shape: &MlpShape, out_gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut p = vec![0.0; shape.len()];
    let layers = shape.layers();
    for (k, l) in layers.iter().enumerate() {
        let scale = if k + 1 < layers.len() {
            (2.0 / l.fan_in as f64).sqrt()
        } else {
            out_gain / (l.fan_in as f64).sqrt()
        };
        for w in &mut p[l.w..l.b] {
            let z: f64 = StandardNormal.sample(rng);
            *w = scale * z;
        }
    }
    p
}

impl PolicyParams {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: usize, init: &InitConfig, rng: &mut impl Rng) -> Self {
        let mut actor = init_mlp(&MlpShape::new(obs_dim, hidden, action_dim), init.actor_output_gain, rng);
        actor.extend(std::iter::repeat_n(
            init.initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
            action_dim,
        ));
        let critic = init_mlp(&MlpShape::new(obs_dim, hidden, 1), init.critic_output_gain, rng);
        Self {
            obs_dim,
            action_dim,
            hidden,
            actor,
            critic,
        }
    }

    /// All-zero parameters (log-std zero).
    pub fn zeros(obs_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            hidden,
            actor: vec![0.0; MlpShape::new(obs_dim, hidden, action_dim).len() + action_dim],
            critic: vec![0.0; MlpShape::new(obs_dim, hidden, 1).len()],
        }
    }

    pub fn actor_shape(&self) -> MlpShape {
        MlpShape::new(self.obs_dim, self.hidden, self.action_dim)
    }

    pub fn critic_shape(&self) -> MlpShape {
        MlpShape::new(self.obs_dim, self.hidden, 1)
    }

    pub fn log_std_offset(&self) -> usize {
        self.actor_shape().len()
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.actor[self.log_std_offset()..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn clamp_log_std(&mut self) {
        let off = self.log_std_offset();
        for v in &mut self.actor[off..] {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.iter().chain(&self.critic).all(|v| v.is_finite())
    }

    fn check_obs(&self, cols: usize) -> Result<()> {
        if cols != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {cols} entries, network expects {}",
                self.obs_dim
            )));
        }
        Ok(())
    }

    /// Batched actor means, one row per observation row.
    pub fn actor_means(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_obs(obs.ncols())?;
        Ok(nn::forward_only(&self.actor_shape(), &self.actor, obs))
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_obs(obs.ncols())?;
        let out = nn::forward_only(&self.critic_shape(), &self.critic, obs);
        Ok(out.column(0).to_owned())
    }

    /// Trainability mask over `actor` that selects only the output-layer weights,
    /// bias and log-std entries of the listed action dimensions.
    pub fn head_mask(&self, dims: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.actor.len()];
        let l3 = self.actor_shape().layers()[2];
        for &d in dims {
            for i in 0..l3.fan_in {
                mask[l3.w + i * l3.fan_out + d] = true;
            }
            mask[l3.b + d] = true;
            mask[self.log_std_offset() + d] = true;
        }
        mask
    }
}

pub fn policy_forward(params: &PolicyParams, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::Shape(e.to_string()))?;
    let mean = params.actor_means(x)?;
    Ok((mean.row(0).to_vec(), params.log_std()))
}

pub fn value_forward(params: &PolicyParams, obs: &[f64]) -> Result<f64> {
    let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(params.values(x)?[0])
}

/// `log(1 - tanh(u)^2)` without cancellation.
pub fn log_squash_jacobian(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn gaussian_log_prob(mean: f64, log_std: f64, u: f64) -> f64 {
    let z = (u - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI
}

/// Log-density of the squashed action produced by pre-squash draw `u`, summed over
/// the dimensions enabled in `mask` (all when `None`).
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut lp = 0.0;
    for d in 0..u.len() {
        if mask.is_some_and(|m| !m[d]) {
            continue;
        }
        lp += gaussian_log_prob(mean[d], log_std[d], u[d]) - log_squash_jacobian(u[d]);
    }
    lp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    /// Squashed action in `(-1, 1)^d`.
    pub action: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

pub fn sample_action(mean: &[f64], log_std: &[f64], rng: &mut impl Rng) -> SampledAction {
    sample_action_masked(mean, log_std, None, rng)
}

/// Dimensions disabled in `mask` are set to their greedy value `tanh(mean)`, draw
/// no randomness and do not contribute to the log-probability.
pub fn sample_action_masked(
    mean: &[f64],
    log_std: &[f64],
    mask: Option<&[bool]>,
    rng: &mut impl Rng,
) -> SampledAction {
    let pre_squash: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .enumerate()
        .map(|(d, (&m, &s))| {
            if mask.is_some_and(|mk| !mk[d]) {
                m
            } else {
                let z: f64 = StandardNormal.sample(rng);
                m + s.exp() * z
            }
        })
        .collect();
    let log_prob = squashed_log_prob(mean, log_std, &pre_squash, mask);
    SampledAction {
        action: pre_squash.iter().map(|u| u.tanh()).collect(),
        pre_squash,
        log_prob,
    }
}

pub fn greedy_action(mean: &[f64]) -> Vec<f64> {
    mean.iter().map(|m| m.tanh()).collect()
}
