//! The multi-group economy as a partially observable Markov game.
//!
//! A [`WorldState`] owns every group, the global clock, the capital mobility
//! for the current episode and one environment random stream per group.
//! [`WorldState::step`] advances all groups in lockstep:
//!
//! ```text
//! per group:
//!   1. decode government and household actions
//!   2. effective labor and wage from current capital
//!   3. output
//!   4. household income, income/asset taxes, consumption, consumption tax,
//!      next wealth plus the lump-sum transfer
//!   5. debt update with G = eta * Y
//!   6. internal capital from the intermediary balance
//! across groups:
//!   7. mean capital tax, capital flows, realized capital
//!   8. productivity shocks
//!   9. rewards
//!  10. clock, termination, observations
//! ```

pub mod action;
pub mod observe;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::econ::{self, EconParams, HouseholdState, TaxPolicy, LABOR_FLOOR, WEALTH_FLOOR};
use crate::error::{Error, Result};
use crate::seeding;

pub use action::{
    decode_gov_action, decode_household_action, GovAction, HouseholdAction, DEFAULT_ETA_MAX,
    GOV_ACTION_DIM, HH_ACTION_DIM,
};
pub use observe::{aggregate_stats, gov_obs_dim, GroupAggregates, HH_OBS_DIM};

/// Raw government action, each component in `[-1, 1]`.
pub type RawGovAction = [f64; GOV_ACTION_DIM];
/// Raw household action, each component in `[-1, 1]`.
pub type RawHouseholdAction = [f64; HH_ACTION_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub groups: usize,
    pub households: usize,
    pub episode_length: usize,
    pub econ: EconParams,
    pub eta_max: f64,
    /// Redistribute government spending as an equal lump-sum transfer to households.
    pub transfer_enabled: bool,
    pub initial_wealth_mean: f64,
    pub initial_wealth_sigma: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            groups: 2,
            households: 300,
            episode_length: 300,
            econ: EconParams::default(),
            eta_max: DEFAULT_ETA_MAX,
            transfer_enabled: true,
            initial_wealth_mean: 10.0,
            initial_wealth_sigma: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::Config("at least one group is required".into()));
        }
        if self.households == 0 {
            return Err(Error::Config("at least one household per group is required".into()));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        if !(self.eta_max > 0.0 && self.eta_max <= 1.0) {
            return Err(Error::Config("eta_max must lie in (0, 1]".into()));
        }
        if !(self.initial_wealth_mean > 0.0) || !(self.initial_wealth_sigma >= 0.0) {
            return Err(Error::Config("initial wealth distribution is invalid".into()));
        }
        self.econ.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub households: Vec<HouseholdState>,
    pub tax_policy: TaxPolicy,
    pub debt: f64,
    pub spending_ratio: f64,
    pub capital_tax: f64,
    /// Realized capital available for production next step.
    pub capital: f64,
    pub last_output: f64,
    pub last_wage: f64,
    pub last_gov_action: [f64; GOV_ACTION_DIM],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    StepLimit,
    CapitalDepletion { group: usize },
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::StepLimit => write!(f, "step-limit"),
            Termination::CapitalDepletion { group } => write!(f, "capital-depletion({group})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Raw action components that fell outside `[-1, 1]`.
    pub clamped_actions: u64,
    /// Households whose post-tax resources were negative and got clamped to zero.
    pub insolvencies: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub gov: Vec<Vec<f64>>,
    /// `households[g][j]` is household `j` of group `g`.
    pub households: Vec<Vec<Vec<f64>>>,
}

/// Per-household quantities realized during one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdFlows {
    pub income: f64,
    pub income_tax: f64,
    pub asset_tax: f64,
    pub consumption: f64,
    pub consumption_tax: f64,
    pub wealth_next: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub gov_action: GovAction,
    pub effective_labor: f64,
    pub wage: f64,
    pub output: f64,
    pub spending: f64,
    pub tax_revenue: f64,
    pub debt: f64,
    pub capital_internal: f64,
    pub flow: f64,
    /// Realized capital before the non-negativity clamp.
    pub capital_real: f64,
    pub income_gini: f64,
    /// Gini of end-of-step wealth.
    pub wealth_gini: f64,
    /// Inequality term used in the government reward (income and start-of-step wealth).
    pub joint_gini: f64,
    pub mean_saving_ratio: f64,
    pub mean_hours: f64,
    pub households: Vec<HouseholdFlows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observations: Observations,
    pub gov_rewards: Vec<f64>,
    pub household_rewards: Vec<Vec<f64>>,
    pub done: bool,
    pub termination: Option<Termination>,
    pub info: Vec<GroupInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub config: WorldConfig,
    pub groups: Vec<GroupState>,
    pub t: usize,
    pub phi: f64,
    pub termination: Option<Termination>,
    pub diagnostics: Diagnostics,
    env_rngs: Vec<ChaCha8Rng>,
}

/// Done flag and reason: capital depletion is reported ahead of the step limit.
pub fn check_termination(world: &WorldState, episode_length: usize) -> Option<Termination> {
    if let Some(group) = world.groups.iter().position(|g| !(g.capital > 0.0)) {
        return Some(Termination::CapitalDepletion { group });
    }
    if world.t >= episode_length {
        return Some(Termination::StepLimit);
    }
    None
}

impl WorldState {
    /// Fresh world with per-group environment streams derived from `seed`.
    pub fn reset(config: &WorldConfig, seed: u64) -> Result<(Self, Observations)> {
        let seeds: Vec<u64> = (0..config.groups as u64)
            .map(|g| seeding::derive_seed(seed, seeding::domain::ENV_GROUP, g))
            .collect();
        Self::reset_with_group_seeds(config, &seeds)
    }

    /// Fresh world with one explicit environment seed per group. `group_seeds.len()`
    /// overrides `config.groups`.
    pub fn reset_with_group_seeds(
        config: &WorldConfig,
        group_seeds: &[u64],
    ) -> Result<(Self, Observations)> {
        let mut config = config.clone();
        config.groups = group_seeds.len();
        config.validate()?;
        let sigma = config.initial_wealth_sigma;
        let mut env_rngs = Vec::with_capacity(config.groups);
        let mut groups = Vec::with_capacity(config.groups);
        for &s in group_seeds {
            let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(s);
            let households: Vec<HouseholdState> = (0..config.households)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let wealth = config.initial_wealth_mean * (sigma * z - 0.5 * sigma * sigma).exp();
                    let mut hh = HouseholdState::new(wealth, 1.0);
                    hh.income = econ::household_income(0.0, 0.0, 1.0, config.econ.r_interest, hh.wealth);
                    hh
                })
                .collect();
            let capital: f64 = households.iter().map(|h| h.wealth).sum();
            let full_time_labor: f64 = households.iter().map(|h| h.productivity).sum();
            let wage = econ::wage_rate(capital, full_time_labor, config.econ.alpha)?;
            groups.push(GroupState {
                households,
                tax_policy: TaxPolicy::default(),
                debt: 0.0,
                spending_ratio: 0.0,
                capital_tax: 0.0,
                capital,
                last_output: 0.0,
                last_wage: wage,
                last_gov_action: [0.0; GOV_ACTION_DIM],
            });
            env_rngs.push(rng);
        }
        let world = WorldState {
            config,
            groups,
            t: 0,
            phi: 0.0,
            termination: None,
            diagnostics: Diagnostics::default(),
            env_rngs,
        };
        let obs = world.observations();
        Ok((world, obs))
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_households(&self) -> usize {
        self.config.households
    }

    /// Capital mobility for this episode; only settable before the first step.
    pub fn set_phi(&mut self, phi: f64) -> Result<()> {
        if self.t != 0 {
            return Err(Error::Usage("phi is fixed once the episode has started".into()));
        }
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Usage(format!("phi must lie in [0, 1], got {phi}")));
        }
        self.phi = phi;
        Ok(())
    }

    /// Overwrite one group's realized capital, e.g. to inject an exogenous shock.
    /// Termination is re-evaluated immediately.
    pub fn set_capital(&mut self, group: usize, capital: f64) -> Result<()> {
        let g = self
            .groups
            .get_mut(group)
            .ok_or_else(|| Error::Usage(format!("no group {group}")))?;
        g.capital = capital.max(0.0);
        if self.termination.is_none() {
            self.termination = check_termination(self, self.config.episode_length);
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.termination.is_some()
    }

    pub fn observations(&self) -> Observations {
        let aggs: Vec<GroupAggregates> =
            self.groups.iter().map(|g| aggregate_stats(&g.households)).collect();
        let gov = self
            .groups
            .iter()
            .enumerate()
            .map(|(n, g)| {
                let rivals = self
                    .groups
                    .iter()
                    .enumerate()
                    .filter(move |(m, _)| *m != n)
                    .map(|(_, r)| r.last_gov_action);
                observe::gov_observation(g.last_wage, &aggs[n], rivals)
            })
            .collect();
        let households = self
            .groups
            .iter()
            .zip(&aggs)
            .map(|(g, agg)| {
                g.households
                    .iter()
                    .map(|h| observe::household_observation(g.last_wage, h, agg))
                    .collect()
            })
            .collect();
        Observations { gov, households }
    }

    /// Advance every group by one step.
    pub fn step(
        &mut self,
        gov_actions: &[RawGovAction],
        hh_actions: &[Vec<RawHouseholdAction>],
    ) -> Result<StepResult> {
        if let Some(reason) = self.termination.or_else(|| check_termination(self, self.config.episode_length)) {
            return Err(Error::Usage(format!("cannot step a terminated world ({reason})")));
        }
        let n = self.groups.len();
        let m = self.config.households;
        if gov_actions.len() != n || hh_actions.len() != n {
            return Err(Error::Shape(format!(
                "expected actions for {n} groups, got {} government and {} household sets",
                gov_actions.len(),
                hh_actions.len()
            )));
        }
        if let Some(bad) = hh_actions.iter().position(|a| a.len() != m) {
            return Err(Error::Shape(format!(
                "group {bad}: expected {m} household actions, got {}",
                hh_actions[bad].len()
            )));
        }

        let p = self.config.econ;
        let mut infos = Vec::with_capacity(n);
        let mut all_decisions: Vec<Vec<HouseholdAction>> = Vec::with_capacity(n);
        let mut hh_rewards = Vec::with_capacity(n);
        let mut gov_rewards = Vec::with_capacity(n);

        for (g, group) in self.groups.iter().enumerate() {
            // (1)
            let (gov, c) = decode_gov_action(&gov_actions[g], self.config.eta_max);
            self.diagnostics.clamped_actions += c as u64;
            let decisions: Vec<HouseholdAction> = hh_actions[g]
                .iter()
                .map(|raw| {
                    let (a, c) = decode_household_action(raw);
                    self.diagnostics.clamped_actions += c as u64;
                    a
                })
                .collect();

            // (2)-(3)
            let labor: f64 = group
                .households
                .iter()
                .zip(&decisions)
                .map(|(h, d)| h.productivity * d.hours)
                .sum();
            let wage = econ::wage_rate(group.capital, labor.max(LABOR_FLOOR), p.alpha)?;
            let output = econ::production(group.capital, labor, p.alpha);
            let spending = gov.spending_ratio * output;
            let transfer = if self.config.transfer_enabled {
                spending / m as f64
            } else {
                0.0
            };

            // (4)
            let mut flows = Vec::with_capacity(m);
            let mut revenue = 0.0;
            let mut rewards = Vec::with_capacity(m);
            for (h, d) in group.households.iter().zip(&decisions) {
                let income =
                    econ::household_income(wage, d.hours, h.productivity, p.r_interest, h.wealth);
                let income_tax =
                    econ::tax_hsv(income.max(WEALTH_FLOOR), gov.tax.tau_i, gov.tax.xi_i)?;
                let asset_tax = econ::tax_hsv(h.wealth.max(WEALTH_FLOOR), gov.tax.tau_a, gov.tax.xi_a)?;
                let resources = econ::post_tax_resources(income, h.wealth, income_tax, asset_tax);
                if resources < 0.0 {
                    self.diagnostics.insolvencies += 1;
                }
                let resources = resources.max(0.0);
                let consumption = econ::consumption_from_resources(d.saving_ratio, resources, p.tau_s);
                let consumption_tax = econ::tax_consumption(consumption, p.tau_s);
                let wealth_next =
                    econ::wealth_update(d.saving_ratio, income, h.wealth, income_tax, asset_tax) + transfer;
                revenue += income_tax + asset_tax + consumption_tax;
                rewards.push(econ::household_reward(consumption, d.hours, p.theta_crra, p.gamma_labor));
                flows.push(HouseholdFlows {
                    income,
                    income_tax,
                    asset_tax,
                    consumption,
                    consumption_tax,
                    wealth_next,
                });
            }

            // (5)-(6)
            let debt_next = econ::debt_update(group.debt, spending, revenue, p.r_interest);
            let sum_wealth: f64 = group.households.iter().map(|h| h.wealth).sum();
            let sum_wealth_next: f64 = flows.iter().map(|f| f.wealth_next).sum();
            let capital_internal = econ::intermediary_capital(
                group.capital,
                group.debt,
                sum_wealth,
                debt_next,
                sum_wealth_next,
                p.r_interest,
            );

            // (9), computed here while start-of-step wealth is at hand
            let incomes: Vec<f64> = flows.iter().map(|f| f.income).collect();
            let wealths: Vec<f64> = group.households.iter().map(|h| h.wealth).collect();
            let wealths_next: Vec<f64> = flows.iter().map(|f| f.wealth_next).collect();
            let joint_gini = econ::joint_gini(&incomes, &wealths)?;
            gov_rewards.push(econ::government_reward(output, joint_gini));
            hh_rewards.push(rewards);

            infos.push(GroupInfo {
                gov_action: gov,
                effective_labor: labor,
                wage,
                output,
                spending,
                tax_revenue: revenue,
                debt: debt_next,
                capital_internal,
                flow: 0.0,
                capital_real: capital_internal,
                income_gini: econ::gini(&incomes)?,
                wealth_gini: econ::gini(&wealths_next)?,
                joint_gini,
                mean_saving_ratio: decisions.iter().map(|d| d.saving_ratio).sum::<f64>() / m as f64,
                mean_hours: decisions.iter().map(|d| d.hours).sum::<f64>() / m as f64,
                households: flows,
            });
            all_decisions.push(decisions);
        }

        // (7)
        let tau_bar = infos.iter().map(|i| i.gov_action.capital_tax).sum::<f64>() / n as f64;
        for (group, info) in self.groups.iter().zip(infos.iter_mut()) {
            info.flow = econ::capital_flow(info.gov_action.capital_tax, tau_bar, group.capital, self.phi);
            info.capital_real = econ::real_capital(info.capital_internal, info.flow);
        }

        // (8) and state commit
        for (g, (group, info)) in self.groups.iter_mut().zip(&infos).enumerate() {
            let rng = &mut self.env_rngs[g];
            for ((h, f), d) in group.households.iter_mut().zip(&info.households).zip(&all_decisions[g]) {
                let u: f64 = StandardNormal.sample(rng);
                h.productivity = econ::update_productivity(h.productivity, p.rho_e, p.sigma_e, u)?;
                h.wealth = f.wealth_next;
                h.income = f.income;
                h.last_saving_ratio = d.saving_ratio;
                h.last_hours = d.hours;
            }
            group.tax_policy = info.gov_action.tax;
            group.spending_ratio = info.gov_action.spending_ratio;
            group.capital_tax = info.gov_action.capital_tax;
            group.debt = info.debt;
            group.capital = info.capital_real.max(0.0);
            group.last_output = info.output;
            group.last_wage = info.wage;
            group.last_gov_action = info.gov_action.to_array();
        }

        // (10)
        self.t += 1;
        self.termination = check_termination(self, self.config.episode_length);

        let all_finite = gov_rewards.iter().all(|r: &f64| r.is_finite())
            && hh_rewards.iter().flatten().all(|r: &f64| r.is_finite());
        if !all_finite {
            return Err(Error::NonFinite {
                context: format!("rewards at step {}", self.t),
            });
        }

        Ok(StepResult {
            observations: self.observations(),
            gov_rewards,
            household_rewards: hh_rewards,
            done: self.termination.is_some(),
            termination: self.termination,
            info: infos,
        })
    }

    /// Serialize the whole state, random streams included, at full precision.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: WorldState = serde_json::from_str(s)?;
        if w.env_rngs.len() != w.groups.len() {
            return Err(Error::Config(
                "snapshot has a different number of random streams than groups".into(),
            ));
        }
        Ok(w)
    }
}
