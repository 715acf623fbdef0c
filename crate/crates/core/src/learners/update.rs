//! Clipped-surrogate and plain policy-gradient updates with analytic gradients.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::nn;
use super::policy::{gaussian_log_prob, log_squash_jacobian, PolicyParams, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Clipped importance-ratio surrogate, several epochs per batch.
    Ppo,
    /// One plain `-log pi * A` step per batch.
    A2c,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" | "ippo" | "clipped-surrogate" => Ok(Algorithm::Ppo),
            "a2c" | "advantage-actor-critic" => Ok(Algorithm::A2c),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ppo => "ppo",
            Algorithm::A2c => "a2c",
        })
    }
}

/// Training data for one update, rows aligned across fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub pre_squash: Array2<f64>,
    pub old_log_prob: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
    /// Action dimensions that were sampled and contribute to the log-probability.
    pub action_mask: Option<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            obs: self.obs.select(Axis(0), rows),
            pre_squash: self.pre_squash.select(Axis(0), rows),
            old_log_prob: self.old_log_prob.select(Axis(0), rows),
            advantages: self.advantages.select(Axis(0), rows),
            returns: self.returns.select(Axis(0), rows),
            action_mask: self.action_mask.clone(),
        }
    }

    fn check(&self, params: &PolicyParams) -> Result<()> {
        let n = self.len();
        if self.obs.ncols() != params.obs_dim || self.pre_squash.ncols() != params.action_dim {
            return Err(Error::Shape(format!(
                "batch is {}x{} obs / {} actions, network expects {} / {}",
                n,
                self.obs.ncols(),
                self.pre_squash.ncols(),
                params.obs_dim,
                params.action_dim
            )));
        }
        if self.pre_squash.nrows() != n
            || self.old_log_prob.len() != n
            || self.advantages.len() != n
            || self.returns.len() != n
        {
            return Err(Error::Shape("batch fields have unequal lengths".into()));
        }
        if self.action_mask.as_ref().is_some_and(|m| m.len() != params.action_dim) {
            return Err(Error::Shape("action mask length differs from action dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActorObjective {
    Clipped { eps: f64 },
    PolicyGradient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorDiagnostics {
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Per-row log-probabilities under `params`, honoring the batch's action mask.
pub fn batch_log_probs(params: &PolicyParams, batch: &Batch) -> Result<Array1<f64>> {
    batch.check(params)?;
    let means = params.actor_means(batch.obs.view())?;
    let ls = params.log_std();
    let mask = batch.action_mask.as_deref();
    Ok(Array1::from_iter((0..batch.len()).map(|i| {
        (0..params.action_dim)
            .filter(|&d| mask.is_none_or(|m| m[d]))
            .map(|d| {
                let u = batch.pre_squash[[i, d]];
                gaussian_log_prob(means[[i, d]], ls[d], u) - log_squash_jacobian(u)
            })
            .sum::<f64>()
    })))
}

/// Mean actor loss over the batch and its gradient with respect to `params.actor`.
pub fn actor_loss_grad(
    params: &PolicyParams,
    batch: &Batch,
    objective: ActorObjective,
) -> Result<(f64, Vec<f64>, ActorDiagnostics)> {
    batch.check(params)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let shape = params.actor_shape();
    let off = params.log_std_offset();
    let (means, cache) = nn::forward(&shape, &params.actor, batch.obs.view());
    let raw_ls = &params.actor[off..];
    let ls = params.log_std();
    let mask = batch.action_mask.as_deref();
    let active: Vec<usize> = (0..params.action_dim).filter(|&d| mask.is_none_or(|m| m[d])).collect();

    let mut d_mean = Array2::<f64>::zeros((n, params.action_dim));
    let mut g_ls = vec![0.0; params.action_dim];
    let mut loss = 0.0;
    let mut diag = ActorDiagnostics::default();
    let inv_n = 1.0 / n as f64;

    for i in 0..n {
        let mut lp = 0.0;
        for &d in &active {
            let u = batch.pre_squash[[i, d]];
            lp += gaussian_log_prob(means[[i, d]], ls[d], u) - log_squash_jacobian(u);
        }
        let adv = batch.advantages[i];
        // d loss_i / d lp_i
        let coef = match objective {
            ActorObjective::Clipped { eps } => {
                let log_ratio = lp - batch.old_log_prob[i];
                let ratio = log_ratio.exp();
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                diag.approx_kl += (ratio - 1.0 - log_ratio) * inv_n;
                if (ratio - 1.0).abs() > eps {
                    diag.clip_fraction += inv_n;
                }
                if unclipped <= clipped {
                    loss -= unclipped;
                    -adv * ratio
                } else {
                    loss -= clipped;
                    0.0
                }
            }
            ActorObjective::PolicyGradient => {
                loss -= lp * adv;
                -adv
            }
        } * inv_n;
        if coef == 0.0 {
            continue;
        }
        for &d in &active {
            let inv_std = (-ls[d]).exp();
            let z = (batch.pre_squash[[i, d]] - means[[i, d]]) * inv_std;
            d_mean[[i, d]] = coef * z * inv_std;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls[d]) {
                g_ls[d] += coef * (z * z - 1.0);
            }
        }
    }

    let mut grad = vec![0.0; params.actor.len()];
    nn::backward(&shape, &params.actor, &cache, d_mean.view(), &mut grad[..off]);
    grad[off..].copy_from_slice(&g_ls);
    Ok((loss * inv_n, grad, diag))
}

/// Half mean squared value error and its gradient with respect to `params.critic`.
pub fn critic_loss_grad(params: &PolicyParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    batch.check(params)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let shape = params.critic_shape();
    let (out, cache) = nn::forward(&shape, &params.critic, batch.obs.view());
    let inv_n = 1.0 / n as f64;
    let mut d_out = Array2::<f64>::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let err = out[[i, 0]] - batch.returns[i];
        loss += 0.5 * err * err * inv_n;
        d_out[[i, 0]] = err * inv_n;
    }
    let mut grad = vec![0.0; params.critic.len()];
    nn::backward(&shape, &params.critic, &cache, d_out.view(), &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub algorithm: Algorithm,
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub normalize_advantages: bool,
    /// Rescale gradients whose L2 norm exceeds this value.
    pub max_grad_norm: Option<f64>,
    pub update_critic: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            clip_eps: 0.2,
            actor_lr: 3e-5,
            critic_lr: 5e-3,
            epochs: 5,
            minibatches: 4,
            normalize_advantages: true,
            max_grad_norm: Some(10.0),
            update_critic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub samples: usize,
}

/// One agent role's parameters together with its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub params: PolicyParams,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl Learner {
    pub fn new(params: PolicyParams) -> Self {
        Self {
            actor_opt: Adam::new(params.actor.len()),
            critic_opt: Adam::new(params.critic.len()),
            params,
        }
    }
}

fn clip_norm(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn normalized(adv: &Array1<f64>) -> Array1<f64> {
    let n = adv.len();
    if n < 2 {
        return adv.clone();
    }
    let mean = adv.sum() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        adv.mapv(|a| a - mean)
    } else {
        adv.mapv(|a| (a - mean) / (std + 1e-8))
    }
}

/// Runs one update on `learner`. `actor_mask` restricts which actor entries may
/// change. On a non-finite loss or parameter the learner is left untouched.
pub fn update(
    learner: &mut Learner,
    batch: &Batch,
    cfg: &UpdateConfig,
    actor_mask: Option<&[bool]>,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    batch.check(&learner.params)?;
    if batch.is_empty() {
        return Err(Error::Usage("update called with an empty batch".into()));
    }
    let mut work = learner.clone();
    let mut data = batch.clone();
    if cfg.normalize_advantages {
        data.advantages = normalized(&data.advantages);
    }
    let (epochs, minibatches, objective) = match cfg.algorithm {
        Algorithm::Ppo => (
            cfg.epochs.max(1),
            cfg.minibatches.clamp(1, data.len()),
            ActorObjective::Clipped { eps: cfg.clip_eps },
        ),
        Algorithm::A2c => (1, 1, ActorObjective::PolicyGradient),
    };

    let mut stats = UpdateStats {
        samples: data.len(),
        ..Default::default()
    };
    let mut steps = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        if minibatches > 1 {
            order.shuffle(rng);
        }
        let chunk = data.len().div_ceil(minibatches);
        for rows in order.chunks(chunk) {
            let mb = if minibatches > 1 { data.select(rows) } else { data.clone() };
            let (a_loss, mut a_grad, diag) = actor_loss_grad(&work.params, &mb, objective)?;
            if !a_loss.is_finite() || a_grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("actor update (loss {a_loss})"),
                });
            }
            clip_norm(&mut a_grad, cfg.max_grad_norm);
            if a_grad.iter().any(|g| *g != 0.0) {
                work.actor_opt.step(&mut work.params.actor, &a_grad, cfg.actor_lr, actor_mask);
                work.params.clamp_log_std();
            }
            stats.actor_loss += a_loss;
            stats.clip_fraction += diag.clip_fraction;
            stats.approx_kl += diag.approx_kl;

            if cfg.update_critic {
                let (c_loss, mut c_grad) = critic_loss_grad(&work.params, &mb)?;
                if !c_loss.is_finite() || c_grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("critic update (loss {c_loss})"),
                    });
                }
                clip_norm(&mut c_grad, cfg.max_grad_norm);
                work.critic_opt.step(&mut work.params.critic, &c_grad, cfg.critic_lr, None);
                stats.critic_loss += c_loss;
            }
            steps += 1;
        }
    }
    if !work.params.is_finite() {
        return Err(Error::NonFinite {
            context: "parameters after update".into(),
        });
    }
    let k = steps as f64;
    stats.actor_loss /= k;
    stats.critic_loss /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    *learner = work;
    Ok(stats)
}

pub fn ppo_update(
    learner: &mut Learner,
    batch: &Batch,
    cfg: &UpdateConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let cfg = UpdateConfig {
        algorithm: Algorithm::Ppo,
        ..cfg.clone()
    };
    update(learner, batch, &cfg, None, rng)
}

pub fn a2c_update(
    learner: &mut Learner,
    batch: &Batch,
    cfg: &UpdateConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let cfg = UpdateConfig {
        algorithm: Algorithm::A2c,
        ..cfg.clone()
    };
    update(learner, batch, &cfg, None, rng)
}

#[cfg(test)]
mod tests {
    use super::super::policy::{sample_action, InitConfig};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_setup(seed: u64, n: usize, obs_dim: usize, act_dim: usize) -> (PolicyParams, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = InitConfig {
            actor_output_gain: 0.5,
            critic_output_gain: 1.0,
            initial_log_std: -0.3,
        };
        let mut params = PolicyParams::new(obs_dim, act_dim, 8, &init, &mut rng);
        let obs = Array2::from_shape_fn((n, obs_dim), |_| rng.random_range(-1.5..1.5));
        let mut pre = Array2::zeros((n, act_dim));
        let mut old = Array1::zeros(n);
        let means = params.actor_means(obs.view()).unwrap();
        let ls = params.log_std();
        for i in 0..n {
            let s = sample_action(&means.row(i).to_vec(), &ls, &mut rng);
            for d in 0..act_dim {
                pre[[i, d]] = s.pre_squash[d];
            }
            // old log-probs away from the current ones so some ratios clip
            old[i] = s.log_prob + rng.random_range(-0.4..0.4);
        }
        // perturb so the evaluation point is not the sampling point
        for p in params.actor.iter_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
        let batch = Batch {
            obs,
            pre_squash: pre,
            old_log_prob: old,
            advantages: Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0)),
            returns: Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0)),
            action_mask: None,
        };
        (params, batch)
    }

    fn check_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let up = f(&xp);
            xp[i] -= 2.0 * h;
            let dn = f(&xp);
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - grad[i]).abs();
            assert!(
                err <= 1e-6 || err / fd.abs().max(grad[i].abs()) < 1e-4,
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        for seed in 0..4 {
            let (params, batch) = random_setup(seed, 10, 5, 3);
            for objective in [ActorObjective::Clipped { eps: 0.2 }, ActorObjective::PolicyGradient] {
                let (_, grad, _) = actor_loss_grad(&params, &batch, objective).unwrap();
                let f = |a: &[f64]| {
                    let mut p = params.clone();
                    p.actor = a.to_vec();
                    actor_loss_grad(&p, &batch, objective).unwrap().0
                };
                check_fd(f, &params.actor, &grad);
            }
        }
    }

    #[test]
    fn masked_actor_gradient_matches_finite_differences() {
        let (params, mut batch) = random_setup(11, 10, 4, 6);
        batch.action_mask = Some(vec![true, true, false, true, false, true]);
        let obj = ActorObjective::Clipped { eps: 0.2 };
        let (_, grad, _) = actor_loss_grad(&params, &batch, obj).unwrap();
        let f = |a: &[f64]| {
            let mut p = params.clone();
            p.actor = a.to_vec();
            actor_loss_grad(&p, &batch, obj).unwrap().0
        };
        check_fd(f, &params.actor, &grad);
        let off = params.log_std_offset();
        assert_eq!(grad[off + 2], 0.0);
        assert_eq!(grad[off + 4], 0.0);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let (params, batch) = random_setup(5, 10, 5, 2);
        let (_, grad) = critic_loss_grad(&params, &batch).unwrap();
        let f = |c: &[f64]| {
            let mut p = params.clone();
            p.critic = c.to_vec();
            critic_loss_grad(&p, &batch).unwrap().0
        };
        check_fd(f, &params.critic, &grad);
    }

    #[test]
    fn clip_inertness_at_unit_ratio() {
        let (params, mut batch) = random_setup(3, 10, 5, 2);
        batch.old_log_prob = batch_log_probs(&params, &batch).unwrap();
        let (_, g_ppo, _) = actor_loss_grad(&params, &batch, ActorObjective::Clipped { eps: f64::INFINITY }).unwrap();
        let (_, g_pg, _) = actor_loss_grad(&params, &batch, ActorObjective::PolicyGradient).unwrap();
        for (a, b) in g_ppo.iter().zip(&g_pg) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_advantages_leave_actor_unchanged() {
        for algorithm in [Algorithm::Ppo, Algorithm::A2c] {
            let (params, mut batch) = random_setup(7, 10, 4, 2);
            batch.advantages.fill(0.0);
            let mut learner = Learner::new(params.clone());
            let cfg = UpdateConfig {
                algorithm,
                ..Default::default()
            };
            update(&mut learner, &batch, &cfg, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(learner.params.actor, params.actor);
            assert_ne!(learner.params.critic, params.critic);
        }
    }

    #[test]
    fn positive_advantage_raises_log_prob() {
        let (params, mut batch) = random_setup(8, 1, 4, 2);
        batch.advantages.fill(1.0);
        batch.old_log_prob = batch_log_probs(&params, &batch).unwrap();
        let before = batch.old_log_prob[0];
        let mut learner = Learner::new(params);
        let cfg = UpdateConfig {
            actor_lr: 1e-6,
            epochs: 1,
            ..Default::default()
        };
        ppo_update(&mut learner, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let after = batch_log_probs(&learner.params, &batch).unwrap()[0];
        assert!(after >= before, "{after} < {before}");
    }

    #[test]
    fn updates_are_deterministic() {
        let (params, batch) = random_setup(9, 32, 4, 2);
        for algorithm in [Algorithm::Ppo, Algorithm::A2c] {
            let cfg = UpdateConfig {
                algorithm,
                actor_lr: 1e-3,
                ..Default::default()
            };
            let mut a = Learner::new(params.clone());
            let mut b = Learner::new(params.clone());
            update(&mut a, &batch, &cfg, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            update(&mut b, &batch, &cfg, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.params.actor, params.actor);
        }
    }

    #[test]
    fn actor_mask_freezes_entries() {
        let (params, batch) = random_setup(10, 16, 4, 6);
        let mask = params.head_mask(&[5]);
        let mut learner = Learner::new(params.clone());
        let cfg = UpdateConfig {
            actor_lr: 1e-2,
            ..Default::default()
        };
        update(&mut learner, &batch, &cfg, Some(&mask), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (i, m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(learner.params.actor[i], params.actor[i]);
            }
        }
    }

    #[test]
    fn nan_batch_aborts_without_mutation() {
        let (params, mut batch) = random_setup(12, 8, 4, 2);
        batch.advantages[3] = f64::NAN;
        let mut learner = Learner::new(params);
        let before = learner.clone();
        let cfg = UpdateConfig {
            normalize_advantages: false,
            ..Default::default()
        };
        let err = update(&mut learner, &batch, &cfg, None, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert_eq!(learner, before);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (params, batch) = random_setup(1, 4, 3, 2);
        let empty = batch.select(&[]);
        let mut learner = Learner::new(params);
        let r = update(&mut learner, &empty, &UpdateConfig::default(), None, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
