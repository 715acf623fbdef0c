use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::policy::PolicyParams;
use super::update::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    Government { group: usize },
    Household { group: usize, index: usize },
}

impl AgentId {
    pub fn group(&self) -> usize {
        match *self {
            AgentId::Government { group } | AgentId::Household { group, .. } => group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Network input at sampling time.
    pub obs: Vec<f64>,
    /// Unsquashed Gaussian draw.
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    /// Critic estimate, filled in when the batch is assembled.
    pub value: f64,
    pub done: bool,
    pub agent: AgentId,
    pub step: usize,
}

/// Transitions collected during one episode, ordered per agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub gov: Vec<Vec<Transition>>,
    pub households: Vec<Vec<Vec<Transition>>>,
}

impl RolloutBuffer {
    pub fn new(groups: usize, households: usize) -> Self {
        Self {
            gov: vec![Vec::new(); groups],
            households: vec![vec![Vec::new(); households]; groups],
        }
    }

    pub fn push(&mut self, t: Transition) {
        match t.agent {
            AgentId::Government { group } => self.gov[group].push(t),
            AgentId::Household { group, index } => self.households[group][index].push(t),
        }
    }

    /// Adds `r` to the latest government transition of `group`.
    pub fn credit_gov(&mut self, group: usize, r: f64) -> Result<()> {
        self.gov[group]
            .last_mut()
            .map(|t| t.reward += r)
            .ok_or_else(|| Error::Usage(format!("no government transition to credit in group {group}")))
    }

    /// Marks the final transition of every agent as terminal.
    pub fn close_episode(&mut self) {
        for traj in self
            .gov
            .iter_mut()
            .chain(self.households.iter_mut().flatten())
        {
            if let Some(t) = traj.last_mut() {
                t.done = true;
            }
        }
    }

    pub fn gov_count(&self, group: usize) -> usize {
        self.gov[group].len()
    }

    pub fn household_count(&self, group: usize, index: usize) -> usize {
        self.households[group][index].len()
    }

    pub fn len(&self) -> usize {
        self.gov.iter().map(Vec::len).sum::<usize>()
            + self.households.iter().flatten().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.gov.iter_mut().for_each(Vec::clear);
        self.households.iter_mut().flatten().for_each(Vec::clear);
    }
}

/// Evaluates the critic on every transition, runs GAE per trajectory and stacks
/// the result into one training batch.
pub fn build_batch(
    trajectories: &mut [&mut Vec<Transition>],
    params: &PolicyParams,
    gamma: f64,
    lambda: f64,
    action_mask: Option<Vec<bool>>,
) -> Result<Batch> {
    let n: usize = trajectories.iter().map(|t| t.len()).sum();
    let mut obs = Array2::<f64>::zeros((n, params.obs_dim));
    let mut pre = Array2::<f64>::zeros((n, params.action_dim));
    let mut old = Array1::<f64>::zeros(n);
    let mut row = 0;
    for traj in trajectories.iter() {
        for t in traj.iter() {
            if t.obs.len() != params.obs_dim || t.pre_squash.len() != params.action_dim {
                return Err(Error::Shape(format!(
                    "transition at step {} does not fit the network",
                    t.step
                )));
            }
            obs.row_mut(row).assign(&Array1::from(t.obs.clone()));
            pre.row_mut(row).assign(&Array1::from(t.pre_squash.clone()));
            old[row] = t.log_prob;
            row += 1;
        }
    }
    let values = params.values(obs.view())?;
    let mut adv = Array1::<f64>::zeros(n);
    let mut ret = Array1::<f64>::zeros(n);
    let mut start = 0;
    for traj in trajectories.iter_mut() {
        let len = traj.len();
        for (t, v) in traj.iter_mut().zip(values.slice(ndarray::s![start..start + len])) {
            t.value = *v;
        }
        let r: Vec<f64> = traj.iter().map(|t| t.reward).collect();
        let v: Vec<f64> = traj.iter().map(|t| t.value).collect();
        let d: Vec<bool> = traj.iter().map(|t| t.done).collect();
        let (a, g) = gae(&r, &v, &d, gamma, lambda)?;
        for k in 0..len {
            adv[start + k] = a[k];
            ret[start + k] = g[k];
        }
        start += len;
    }
    Ok(Batch {
        obs,
        pre_squash: pre,
        old_log_prob: old,
        advantages: adv,
        returns: ret,
        action_mask,
    })
}
