//! Bucketed household statistics and agent observations.

use serde::{Deserialize, Serialize};

use super::action::GOV_ACTION_DIM;
use crate::econ::HouseholdState;

pub const GOV_OBS_BASE: usize = 7;
pub const HH_OBS_DIM: usize = 10;

pub fn gov_obs_dim(groups: usize) -> usize {
    GOV_OBS_BASE + GOV_ACTION_DIM * groups.saturating_sub(1)
}

/// Mean income, wealth and productivity of the richest 10% and poorest 50%.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAggregates {
    pub income_top: f64,
    pub income_btm: f64,
    pub wealth_top: f64,
    pub wealth_btm: f64,
    pub prod_top: f64,
    pub prod_btm: f64,
}

impl GroupAggregates {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.income_top,
            self.income_btm,
            self.wealth_top,
            self.wealth_btm,
            self.prod_top,
            self.prod_btm,
        ]
    }
}

/// Households are ranked by wealth, richest first (ties keep index order).
/// The top bucket holds the first `ceil(0.1 M)`, the bottom bucket the last `ceil(0.5 M)`.
pub fn aggregate_stats(households: &[HouseholdState]) -> GroupAggregates {
    let m = households.len();
    if m == 0 {
        return GroupAggregates::default();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        households[b]
            .wealth
            .total_cmp(&households[a].wealth)
            .then(a.cmp(&b))
    });
    let top_n = (m as f64 * 0.1).ceil() as usize;
    let btm_n = (m as f64 * 0.5).ceil() as usize;
    let mean = |idx: &[usize], f: fn(&HouseholdState) -> f64| {
        idx.iter().map(|&i| f(&households[i])).sum::<f64>() / idx.len() as f64
    };
    let top = &order[..top_n];
    let btm = &order[m - btm_n..];
    GroupAggregates {
        income_top: mean(top, |h| h.income),
        income_btm: mean(btm, |h| h.income),
        wealth_top: mean(top, |h| h.wealth),
        wealth_btm: mean(btm, |h| h.wealth),
        prod_top: mean(top, |h| h.productivity),
        prod_btm: mean(btm, |h| h.productivity),
    }
}

/// Government view: wage, the six bucket means, then every rival's last decoded action
/// in group order.
pub fn gov_observation(
    wage: f64,
    agg: &GroupAggregates,
    rival_actions: impl Iterator<Item = [f64; GOV_ACTION_DIM]>,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(GOV_OBS_BASE);
    obs.push(wage);
    obs.extend_from_slice(&agg.to_array());
    for a in rival_actions {
        obs.extend_from_slice(&a);
    }
    obs
}

pub fn household_observation(wage: f64, hh: &HouseholdState, agg: &GroupAggregates) -> Vec<f64> {
    let mut obs = Vec::with_capacity(HH_OBS_DIM);
    obs.extend_from_slice(&[wage, hh.income, hh.wealth, hh.productivity]);
    obs.extend_from_slice(&agg.to_array());
    obs
}
