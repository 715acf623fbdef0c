//! Affine decoding of raw policy outputs in `[-1, 1]` onto economic ranges.

use serde::{Deserialize, Serialize};

use crate::econ::TaxPolicy;

pub const GOV_ACTION_DIM: usize = 6;
pub const HH_ACTION_DIM: usize = 2;

/// Upper bound of every tax parameter and of the capital tax.
pub const TAX_UPPER: f64 = 0.99;
pub const DEFAULT_ETA_MAX: f64 = 0.5;

/// A decoded government decision.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GovAction {
    pub tax: TaxPolicy,
    pub spending_ratio: f64,
    pub capital_tax: f64,
}

impl GovAction {
    /// `(tau_i, xi_i, tau_a, xi_a, eta, tau_k)`, the A1..A6 reporting order.
    pub fn to_array(&self) -> [f64; GOV_ACTION_DIM] {
        [
            self.tax.tau_i,
            self.tax.xi_i,
            self.tax.tau_a,
            self.tax.xi_a,
            self.spending_ratio,
            self.capital_tax,
        ]
    }
}

/// A decoded household decision.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HouseholdAction {
    pub saving_ratio: f64,
    pub hours: f64,
}

fn unit_interval(raw: f64, clamped: &mut u32) -> f64 {
    let x = if raw.is_nan() {
        *clamped += 1;
        0.0
    } else if !(-1.0..=1.0).contains(&raw) {
        *clamped += 1;
        raw.clamp(-1.0, 1.0)
    } else {
        raw
    };
    (x + 1.0) / 2.0
}

/// Decode a raw 6-vector. Returns the action and the number of components
/// that had to be clamped into `[-1, 1]` (NaN counts and maps to 0).
pub fn decode_gov_action(raw: &[f64; GOV_ACTION_DIM], eta_max: f64) -> (GovAction, u32) {
    let mut clamped = 0;
    let mut u = [0.0; GOV_ACTION_DIM];
    for (dst, &r) in u.iter_mut().zip(raw) {
        *dst = unit_interval(r, &mut clamped);
    }
    let action = GovAction {
        tax: TaxPolicy {
            tau_i: TAX_UPPER * u[0],
            xi_i: TAX_UPPER * u[1],
            tau_a: TAX_UPPER * u[2],
            xi_a: TAX_UPPER * u[3],
        },
        spending_ratio: eta_max * u[4],
        capital_tax: TAX_UPPER * u[5],
    };
    (action, clamped)
}

pub fn decode_household_action(raw: &[f64; HH_ACTION_DIM]) -> (HouseholdAction, u32) {
    let mut clamped = 0;
    let saving_ratio = unit_interval(raw[0], &mut clamped);
    let hours = unit_interval(raw[1], &mut clamped);
    (
        HouseholdAction {
            saving_ratio,
            hours,
        },
        clamped,
    )
}
