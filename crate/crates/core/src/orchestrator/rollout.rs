//! One episode of interaction between the world and the learned policies.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::policy::{sample_action_masked, PolicyParams};
use crate::learners::{AgentId, Learner, RolloutBuffer, Transition};
use crate::seeding::{self, domain};
use crate::world::{
    decode_gov_action, gov_obs_dim, RawGovAction, RawHouseholdAction, StepResult, Termination,
    WorldConfig, WorldState, GOV_ACTION_DIM, HH_ACTION_DIM, HH_OBS_DIM,
};

use super::config::TrainConfig;

/// Household network input: own observation followed by the decoded government action.
pub const HH_INPUT_DIM: usize = HH_OBS_DIM + GOV_ACTION_DIM;
/// Government action dimensions set inside the group (taxes and spending).
pub const INTRA_DIMS: [usize; 5] = [0, 1, 2, 3, 4];
/// The capital tax, the only instrument acting across groups.
pub const INTER_DIMS: [usize; 1] = [5];

/// `sign(x) * ln(1 + |x|)`, keeps wealth-scale inputs in a trainable range.
pub fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub fn gov_input(obs: &[f64]) -> Vec<f64> {
    obs.iter().copied().map(signed_log).collect()
}

pub fn household_input(obs: &[f64], decoded_gov: &[f64; GOV_ACTION_DIM]) -> Vec<f64> {
    obs.iter().copied().map(signed_log).chain(decoded_gov.iter().copied()).collect()
}

/// Every group's government learner and its shared household learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agents {
    pub gov: Vec<Learner>,
    pub households: Vec<Learner>,
}

impl Agents {
    pub fn new(cfg: &TrainConfig) -> Self {
        let init = cfg.init_config();
        let gov = (0..cfg.groups)
            .map(|g| {
                let mut rng = seeding::stream(cfg.seed, domain::GOV_INIT, g as u64);
                Learner::new(PolicyParams::new(gov_obs_dim(cfg.groups), GOV_ACTION_DIM, cfg.hidden, &init, &mut rng))
            })
            .collect();
        let households = (0..cfg.groups)
            .map(|g| {
                let mut rng = seeding::stream(cfg.seed, domain::HH_INIT, g as u64);
                Learner::new(PolicyParams::new(HH_INPUT_DIM, HH_ACTION_DIM, cfg.hidden, &init, &mut rng))
            })
            .collect();
        Self { gov, households }
    }

    pub fn groups(&self) -> usize {
        self.gov.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Sample,
    /// `tanh` of the policy mean, no randomness.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    pub phi: f64,
    pub n_gov: usize,
    pub mode: ActionMode,
    /// Government action dimensions that are sampled; the rest use the mean.
    pub gov_sampled_dims: Option<Vec<bool>>,
    /// Store transitions for training.
    pub collect: bool,
}

/// Summary statistics of one group over one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEpisodeStats {
    pub gdp: f64,
    pub wealth_gini: f64,
    pub income_gini: f64,
    pub wealth_gini_mean: f64,
    pub income_gini_mean: f64,
    /// Per-step means of the decoded A1..A6 government and A7..A8 household actions.
    pub actions: [f64; 8],
    pub gov_return: f64,
    pub household_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub survived_steps: usize,
    pub termination: Option<Termination>,
    pub phi: f64,
    pub groups: Vec<GroupEpisodeStats>,
}

struct Accumulator {
    steps: usize,
    gdp: Vec<f64>,
    wealth_gini: Vec<f64>,
    income_gini: Vec<f64>,
    wealth_gini_sum: Vec<f64>,
    income_gini_sum: Vec<f64>,
    actions: Vec<[f64; 8]>,
    gov_return: Vec<f64>,
    hh_return: Vec<f64>,
}

impl Accumulator {
    fn new(groups: usize) -> Self {
        Self {
            steps: 0,
            gdp: vec![0.0; groups],
            wealth_gini: vec![0.0; groups],
            income_gini: vec![0.0; groups],
            wealth_gini_sum: vec![0.0; groups],
            income_gini_sum: vec![0.0; groups],
            actions: vec![[0.0; 8]; groups],
            gov_return: vec![0.0; groups],
            hh_return: vec![0.0; groups],
        }
    }

    fn record(&mut self, r: &StepResult) {
        self.steps += 1;
        for (g, info) in r.info.iter().enumerate() {
            self.gdp[g] += info.output;
            self.wealth_gini[g] = info.wealth_gini;
            self.income_gini[g] = info.income_gini;
            self.wealth_gini_sum[g] += info.wealth_gini;
            self.income_gini_sum[g] += info.income_gini;
            let a = info.gov_action.to_array();
            for d in 0..GOV_ACTION_DIM {
                self.actions[g][d] += a[d];
            }
            self.actions[g][6] += info.mean_saving_ratio;
            self.actions[g][7] += info.mean_hours;
            self.gov_return[g] += r.gov_rewards[g];
            let hh = &r.household_rewards[g];
            self.hh_return[g] += hh.iter().sum::<f64>() / hh.len() as f64;
        }
    }

    fn finish(self, termination: Option<Termination>, phi: f64) -> EpisodeStats {
        let k = self.steps.max(1) as f64;
        let groups = (0..self.gdp.len())
            .map(|g| GroupEpisodeStats {
                gdp: self.gdp[g] / k,
                wealth_gini: self.wealth_gini[g],
                income_gini: self.income_gini[g],
                wealth_gini_mean: self.wealth_gini_sum[g] / k,
                income_gini_mean: self.income_gini_sum[g] / k,
                actions: self.actions[g].map(|a| a / k),
                gov_return: self.gov_return[g],
                household_return: self.hh_return[g],
            })
            .collect();
        EpisodeStats {
            survived_steps: self.steps,
            termination,
            phi,
            groups,
        }
    }
}

fn pick(mean: &[f64], log_std: &[f64], mode: ActionMode, mask: Option<&[bool]>, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) {
    match mode {
        ActionMode::Sample => {
            let s = sample_action_masked(mean, log_std, mask, rng);
            (s.action, s.pre_squash, s.log_prob)
        }
        ActionMode::Greedy => (mean.iter().map(|m| m.tanh()).collect(), mean.to_vec(), 0.0),
    }
}

fn rows(data: &[Vec<f64>], cols: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = data.iter().flatten().copied().collect();
    Array2::from_shape_vec((data.len(), cols), flat).map_err(|e| Error::Shape(e.to_string()))
}

/// Runs one episode from `reset(world_cfg, env_seed)`.
///
/// Governments act at `t mod n_gov == 0` and their decoded action is held in
/// between; rewards earned during held steps are credited to the latest
/// government transition. Households act every step on their own observation
/// plus the group's current government action.
pub fn run_episode(
    world_cfg: &WorldConfig,
    agents: &Agents,
    env_seed: u64,
    sampling_seed: u64,
    opts: &EpisodeOptions,
) -> Result<(RolloutBuffer, EpisodeStats)> {
    if opts.n_gov == 0 {
        return Err(Error::Config("n_gov must be at least 1".into()));
    }
    let (mut world, mut obs) = WorldState::reset(world_cfg, env_seed)?;
    world.set_phi(opts.phi)?;
    run_from(&mut world, &mut obs, agents, sampling_seed, opts)
}

/// Continues an episode from an existing world state.
pub fn run_from(
    world: &mut WorldState,
    obs: &mut crate::world::Observations,
    agents: &Agents,
    sampling_seed: u64,
    opts: &EpisodeOptions,
) -> Result<(RolloutBuffer, EpisodeStats)> {
    run_from_observed(world, obs, agents, sampling_seed, opts, &mut |_, _, _| {})
}

/// Like [`run_from`], calling `on_step` with the raw actions and the result of every step.
pub fn run_from_observed(
    world: &mut WorldState,
    obs: &mut crate::world::Observations,
    agents: &Agents,
    sampling_seed: u64,
    opts: &EpisodeOptions,
    on_step: &mut dyn FnMut(&[RawGovAction], &[Vec<RawHouseholdAction>], &StepResult),
) -> Result<(RolloutBuffer, EpisodeStats)> {
    let n = world.n_groups();
    let m = world.n_households();
    if agents.groups() != n {
        return Err(Error::Shape(format!(
            "policies were built for {} groups, the world has {n}",
            agents.groups()
        )));
    }
    for (g, l) in agents.gov.iter().enumerate() {
        if l.params.obs_dim != gov_obs_dim(n) {
            return Err(Error::Shape(format!(
                "government {g} expects {} inputs, the world provides {}",
                l.params.obs_dim,
                gov_obs_dim(n)
            )));
        }
    }
    let mut gov_rngs: Vec<ChaCha8Rng> =
        (0..n).map(|g| seeding::stream(sampling_seed, domain::GOV_SAMPLING, g as u64)).collect();
    let mut hh_rngs: Vec<ChaCha8Rng> =
        (0..n).map(|g| seeding::stream(sampling_seed, domain::HH_SAMPLING, g as u64)).collect();
    let gov_log_std: Vec<Vec<f64>> = agents.gov.iter().map(|l| l.params.log_std()).collect();
    let hh_log_std: Vec<Vec<f64>> = agents.households.iter().map(|l| l.params.log_std()).collect();

    let mut buffer = if opts.collect { RolloutBuffer::new(n, m) } else { RolloutBuffer::new(0, 0) };
    let mut acc = Accumulator::new(n);
    let mut held: Vec<RawGovAction> = vec![[0.0; GOV_ACTION_DIM]; n];
    let mut decoded: Vec<[f64; GOV_ACTION_DIM]> = vec![[0.0; GOV_ACTION_DIM]; n];
    let mask = opts.gov_sampled_dims.as_deref();

    while !world.is_done() {
        let t = world.t;
        if t % opts.n_gov == 0 {
            for g in 0..n {
                let input = gov_input(&obs.gov[g]);
                let mean = agents.gov[g].params.actor_means(rows(std::slice::from_ref(&input), input.len())?.view())?;
                let (action, pre, lp) = pick(mean.row(0).as_slice().expect("row"), &gov_log_std[g], opts.mode, mask, &mut gov_rngs[g]);
                held[g].copy_from_slice(&action);
                decoded[g] = decode_gov_action(&held[g], world.config.eta_max).0.to_array();
                if opts.collect {
                    buffer.push(Transition {
                        obs: input,
                        pre_squash: pre,
                        log_prob: lp,
                        reward: 0.0,
                        value: 0.0,
                        done: false,
                        agent: AgentId::Government { group: g },
                        step: t,
                    });
                }
            }
        }

        let mut hh_actions: Vec<Vec<RawHouseholdAction>> = Vec::with_capacity(n);
        for g in 0..n {
            let inputs: Vec<Vec<f64>> = obs.households[g].iter().map(|o| household_input(o, &decoded[g])).collect();
            let means = agents.households[g].params.actor_means(rows(&inputs, HH_INPUT_DIM)?.view())?;
            let mut acts = Vec::with_capacity(m);
            let mut picked = Vec::with_capacity(m);
            for j in 0..m {
                let (a, pre, lp) = pick(means.row(j).as_slice().expect("row"), &hh_log_std[g], opts.mode, None, &mut hh_rngs[g]);
                acts.push([a[0], a[1]]);
                picked.push((pre, lp));
            }
            if opts.collect {
                for (j, (pre, lp)) in picked.into_iter().enumerate() {
                    buffer.push(Transition {
                        obs: inputs[j].clone(),
                        pre_squash: pre,
                        log_prob: lp,
                        reward: 0.0,
                        value: 0.0,
                        done: false,
                        agent: AgentId::Household { group: g, index: j },
                        step: t,
                    });
                }
            }
            hh_actions.push(acts);
        }

        let result = world.step(&held, &hh_actions)?;
        on_step(&held, &hh_actions, &result);
        if opts.collect {
            for g in 0..n {
                buffer.credit_gov(g, result.gov_rewards[g])?;
                for j in 0..m {
                    if let Some(tr) = buffer.households[g][j].last_mut() {
                        tr.reward = result.household_rewards[g][j];
                    }
                }
            }
        }
        acc.record(&result);
        *obs = result.observations;
    }
    if opts.collect {
        buffer.close_episode();
    }
    Ok((buffer, acc.finish(world.termination, world.phi)))
}

/// Uniform random actions in `[-1, 1]`, one stream per group.
pub fn random_actions(
    rngs: &mut [ChaCha8Rng],
    households: usize,
) -> (Vec<RawGovAction>, Vec<Vec<RawHouseholdAction>>) {
    let mut gov = Vec::with_capacity(rngs.len());
    let mut hh = Vec::with_capacity(rngs.len());
    for rng in rngs.iter_mut() {
        let mut a = [0.0; GOV_ACTION_DIM];
        a.iter_mut().for_each(|x| *x = rng.random_range(-1.0..=1.0));
        gov.push(a);
        hh.push(
            (0..households)
                .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                .collect(),
        );
    }
    (gov, hh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            groups: 2,
            households: 6,
            episode_length: 30,
            hidden: 8,
            ..Default::default()
        }
    }

    fn opts(n_gov: usize) -> EpisodeOptions {
        EpisodeOptions {
            phi: 0.5,
            n_gov,
            mode: ActionMode::Sample,
            gov_sampled_dims: None,
            collect: true,
        }
    }

    #[test]
    fn hierarchical_counts() {
        let cfg = small_cfg();
        let agents = Agents::new(&cfg);
        for n_gov in [1, 7, 10, 30] {
            let (buf, stats) = run_episode(&cfg.world_config(), &agents, 1, 2, &opts(n_gov)).unwrap();
            let t = stats.survived_steps;
            for g in 0..2 {
                assert_eq!(buf.gov_count(g), t.div_ceil(n_gov));
                for j in 0..6 {
                    assert_eq!(buf.household_count(g, j), t);
                }
            }
            for tr in &buf.gov[0] {
                assert_eq!(tr.step % n_gov, 0);
            }
        }
    }

    #[test]
    fn held_rewards_sum_onto_decision() {
        let cfg = small_cfg();
        let agents = Agents::new(&cfg);
        let (buf, stats) = run_episode(&cfg.world_config(), &agents, 3, 4, &opts(10)).unwrap();
        let total: f64 = buf.gov[1].iter().map(|t| t.reward).sum();
        assert!((total - stats.groups[1].gov_return).abs() < 1e-9 * (1.0 + total.abs()));
    }

    #[test]
    fn greedy_episodes_are_deterministic() {
        let cfg = small_cfg();
        let agents = Agents::new(&cfg);
        let o = EpisodeOptions {
            mode: ActionMode::Greedy,
            collect: false,
            ..opts(10)
        };
        let a = run_episode(&cfg.world_config(), &agents, 5, 6, &o).unwrap().1;
        let b = run_episode(&cfg.world_config(), &agents, 5, 99, &o).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_policies_are_rejected() {
        let cfg = small_cfg();
        let agents = Agents::new(&TrainConfig { groups: 3, ..cfg.clone() });
        let r = run_episode(&cfg.world_config(), &agents, 1, 1, &opts(10));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn signed_log_is_odd() {
        assert_eq!(signed_log(0.0), 0.0);
        assert!((signed_log(-3.0) + signed_log(3.0)).abs() < 1e-15);
        assert!((signed_log(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
    }
}
