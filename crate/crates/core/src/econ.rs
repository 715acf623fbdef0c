//! Economic primitives of the intra-group household/government economy and the
//! inter-group capital competition.
//!
//! Every function here is pure and takes plain numbers, so each formula can be
//! checked on its own. The world step in [`crate::world`] composes them in a
//! fixed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to household wealth after every wealth update.
pub const WEALTH_FLOOR: f64 = 1e-6;
/// Consumption is floored here before entering the CRRA term.
pub const CONSUMPTION_FLOOR: f64 = 1e-8;
/// Output is floored here before taking its logarithm in the government reward.
pub const OUTPUT_FLOOR: f64 = 1e-8;
/// Substituted for aggregate effective labor when every household is idle.
pub const LABOR_FLOOR: f64 = 1e-6;

/// Structural constants of one economy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconParams {
    /// Capital elasticity of output.
    pub alpha: f64,
    /// Interest rate per step.
    pub r_interest: f64,
    /// Persistence of log productivity.
    pub rho_e: f64,
    /// Volatility of the log-productivity shock.
    pub sigma_e: f64,
    /// Household discount factor.
    pub beta: f64,
    /// CRRA coefficient of consumption utility.
    pub theta_crra: f64,
    /// Curvature of labor disutility (inverse Frisch elasticity).
    pub gamma_labor: f64,
    /// Flat consumption tax rate.
    pub tau_s: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            alpha: 0.36,
            r_interest: 0.04,
            rho_e: 0.95,
            sigma_e: 0.2,
            beta: 0.975,
            theta_crra: 0.5,
            gamma_labor: 1.0,
            tau_s: 0.065,
        }
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if !(self.theta_crra > 0.0) || self.theta_crra == 1.0 {
            return bad("theta_crra must be positive and different from 1");
        }
        if !(self.gamma_labor > 0.0) {
            return bad("gamma_labor must be positive");
        }
        if !(self.tau_s >= 0.0) {
            return bad("tau_s must be non-negative");
        }
        if !(self.rho_e >= 0.0) || !(self.sigma_e >= 0.0) {
            return bad("rho_e and sigma_e must be non-negative");
        }
        if !self.r_interest.is_finite() {
            return bad("r_interest must be finite");
        }
        Ok(())
    }
}

/// Nonlinear (HSV) income and asset tax schedules set by a government.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaxPolicy {
    pub tau_i: f64,
    pub xi_i: f64,
    pub tau_a: f64,
    pub xi_a: f64,
}

/// One household's state. `income`, `last_saving_ratio` and `last_hours`
/// describe the most recent step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdState {
    pub wealth: f64,
    pub productivity: f64,
    pub income: f64,
    pub last_saving_ratio: f64,
    pub last_hours: f64,
}

impl HouseholdState {
    pub fn new(wealth: f64, productivity: f64) -> Self {
        Self {
            wealth: wealth.max(WEALTH_FLOOR),
            productivity,
            income: 0.0,
            last_saving_ratio: 0.0,
            last_hours: 0.0,
        }
    }
}

/// Log-AR(1) productivity transition driven by a standard-normal draw `u`.
pub fn update_productivity(e: f64, rho_e: f64, sigma_e: f64, u: f64) -> Result<f64> {
    if !(e > 0.0) {
        return Err(Error::domain(
            "update_productivity",
            format!("productivity must be positive, got {e}"),
        ));
    }
    Ok((rho_e * e.ln() + sigma_e * u).exp())
}

/// Labor plus capital income.
pub fn household_income(w: f64, h: f64, e: f64, r_interest: f64, a: f64) -> f64 {
    w * h * e + r_interest * a
}

/// HSV tax on a positive base: `x - (1-tau)/(1-xi) * x^(1-xi)`.
pub fn tax_hsv(x: f64, tau: f64, xi: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(
            "tax_hsv",
            format!("taxable base must be positive, got {x}"),
        ));
    }
    if !(0.0..1.0).contains(&tau) || !(0.0..1.0).contains(&xi) {
        return Err(Error::domain(
            "tax_hsv",
            format!("tau and xi must lie in [0, 1), got tau={tau}, xi={xi}"),
        ));
    }
    Ok(x - (1.0 - tau) / (1.0 - xi) * x.powf(1.0 - xi))
}

pub fn tax_consumption(c: f64, tau_s: f64) -> f64 {
    tau_s * c
}

/// Resources left after income and asset taxes. Negative means insolvent.
pub fn post_tax_resources(i: f64, a: f64, t_inc: f64, t_ast: f64) -> f64 {
    i - t_inc + a - t_ast
}

/// Consumption implied by saving ratio `p` out of (already non-negative) resources.
pub fn consumption_from_resources(p: f64, resources: f64, tau_s: f64) -> f64 {
    (1.0 - p) / (1.0 + tau_s) * resources
}

pub fn consumption_from_saving(
    p: f64,
    i: f64,
    a: f64,
    t_inc: f64,
    t_ast: f64,
    tau_s: f64,
) -> Result<f64> {
    let resources = post_tax_resources(i, a, t_inc, t_ast);
    if resources < 0.0 {
        return Err(Error::domain(
            "consumption_from_saving",
            format!("household is insolvent: post-tax resources {resources}"),
        ));
    }
    Ok(consumption_from_resources(p, resources, tau_s))
}

/// Next-period wealth `p * R`, floored at [`WEALTH_FLOOR`].
pub fn wealth_update(p: f64, i: f64, a: f64, t_inc: f64, t_ast: f64) -> f64 {
    (p * post_tax_resources(i, a, t_inc, t_ast)).max(WEALTH_FLOOR)
}

/// Cobb-Douglas output.
pub fn production(k: f64, l: f64, alpha: f64) -> f64 {
    if k <= 0.0 || l <= 0.0 {
        return 0.0;
    }
    k.powf(alpha) * l.powf(1.0 - alpha)
}

/// Marginal product of effective labor.
pub fn wage_rate(k: f64, effective_labor: f64, alpha: f64) -> Result<f64> {
    if !(effective_labor > 0.0) {
        return Err(Error::domain(
            "wage_rate",
            "aggregate effective labor is zero".to_string(),
        ));
    }
    Ok((1.0 - alpha) * (k.max(0.0) / effective_labor).powf(alpha))
}

pub fn debt_update(debt: f64, spending: f64, tax_revenue: f64, r_interest: f64) -> f64 {
    (1.0 + r_interest) * debt + spending - tax_revenue
}

/// Intermediary balance condition solved for next-period internal capital.
pub fn intermediary_capital(
    k: f64,
    debt: f64,
    sum_wealth: f64,
    debt_next: f64,
    sum_wealth_next: f64,
    r_interest: f64,
) -> f64 {
    r_interest * k + (1.0 + r_interest) * (debt - sum_wealth) + sum_wealth_next - debt_next
}

/// Mobile-capital flow into a group taxing capital at `tau_n` against the mean `tau_bar`.
pub fn capital_flow(tau_n: f64, tau_bar: f64, k_n: f64, phi: f64) -> f64 {
    -phi * (tau_n - tau_bar) * k_n
}

pub fn real_capital(k_internal: f64, flow: f64) -> f64 {
    k_internal + flow
}

/// Gini coefficient, `sum_i sum_j |x_i - x_j| / (2 n^2 mean)`.
///
/// Evaluated in O(n log n) through the sorted-rank form. All-zero input
/// returns 0.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("gini", "empty input".to_string()));
    }
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(
            "gini",
            format!("values must be finite and non-negative, got {bad}"),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    // sum_{i<j} (x_j - x_i) accumulated as a running prefix sum keeps every term non-negative.
    let mut prefix = 0.0;
    let mut pair_sum = 0.0;
    for (idx, &x) in sorted.iter().enumerate() {
        pair_sum += idx as f64 * x - prefix;
        prefix += x;
    }
    Ok((pair_sum / (n * total)).max(0.0))
}

/// Inequality term of the government objective: mean of the income and wealth Ginis.
pub fn joint_gini(incomes: &[f64], wealths: &[f64]) -> Result<f64> {
    Ok(0.5 * (gini(incomes)? + gini(wealths)?))
}

/// Per-step CRRA utility of consumption minus labor disutility.
pub fn household_reward(c: f64, h: f64, theta_crra: f64, gamma_labor: f64) -> f64 {
    let c = c.max(CONSUMPTION_FLOOR);
    c.powf(1.0 - theta_crra) / (1.0 - theta_crra) - h.powf(1.0 + gamma_labor) / (1.0 + gamma_labor)
}

/// Per-step social welfare: log output scaled by equality.
pub fn government_reward(output: f64, gini_joint: f64) -> f64 {
    output.max(OUTPUT_FLOOR).ln() * (1.0 - gini_joint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pairwise_gini(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for a in x {
            for b in x {
                s += (a - b).abs();
            }
        }
        s / (2.0 * n * n * mean)
    }

    #[test]
    fn productivity_examples() {
        assert_eq!(update_productivity(1.0, 0.9, 0.2, 0.0).unwrap(), 1.0);
        assert_eq!(update_productivity(2.0, 1.0, 0.0, 3.7).unwrap(), 2.0);
        // exp(0.9 ln 1.5 + 0.2) = 1.5^0.9 * e^0.2
        let oracle = 1.5f64.powf(0.9) * 0.2f64.exp();
        assert_relative_eq!(
            update_productivity(1.5, 0.9, 0.2, 1.0).unwrap(),
            oracle,
            max_relative = 1e-14
        );
        assert!(update_productivity(0.0, 0.9, 0.2, 0.0).is_err());
        assert!(update_productivity(-1.0, 0.9, 0.2, 0.0).is_err());
    }

    #[test]
    fn income_examples() {
        assert_eq!(household_income(1.0, 0.0, 1.0, 0.04, 100.0), 4.0);
        assert_eq!(household_income(2.0, 0.5, 1.0, 0.0, 0.0), 1.0);
        assert_relative_eq!(
            household_income(1.3, 0.4, 2.1, 0.04, 50.0),
            1.092 + 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn hsv_examples() {
        assert_eq!(tax_hsv(5.0, 0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(tax_hsv(5.0, 0.2, 0.0).unwrap(), 1.0, max_relative = 1e-14);
        let oracle = 2.0 - (0.87 / 0.95) * 2f64.powf(0.95);
        assert_relative_eq!(tax_hsv(2.0, 0.13, 0.05).unwrap(), oracle, max_relative = 1e-14);
        assert!(tax_hsv(0.0, 0.1, 0.1).is_err());
        assert!(tax_hsv(-3.0, 0.1, 0.1).is_err());
        assert!(tax_hsv(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn consumption_tax_examples() {
        assert_eq!(tax_consumption(0.0, 0.1), 0.0);
        assert_eq!(tax_consumption(100.0, 0.0), 0.0);
        assert_relative_eq!(tax_consumption(37.5, 0.08), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn consumption_examples() {
        assert_eq!(consumption_from_saving(1.0, 3.0, 7.0, 0.0, 0.0, 0.1).unwrap(), 0.0);
        assert_eq!(consumption_from_saving(0.0, 4.0, 6.0, 0.0, 0.0, 0.0).unwrap(), 10.0);
        let c = consumption_from_saving(0.3, 5.0, 10.0, 0.5, 1.0, 0.1).unwrap();
        assert_relative_eq!(c, 0.7 / 1.1 * 13.5, max_relative = 1e-14);
        let a_next = wealth_update(0.3, 5.0, 10.0, 0.5, 1.0);
        assert_relative_eq!(a_next + c + tax_consumption(c, 0.1), 13.5, max_relative = 1e-12);
        assert!(consumption_from_saving(0.3, 1.0, 1.0, 2.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn wealth_examples() {
        assert_eq!(wealth_update(0.0, 5.0, 10.0, 1.0, 1.0), WEALTH_FLOOR);
        assert_eq!(wealth_update(1.0, 5.0, 10.0, 0.0, 0.0), 15.0);
    }

    #[test]
    fn production_and_wage_examples() {
        assert_eq!(production(1.0, 1.0, 0.36), 1.0);
        assert_eq!(production(0.0, 5.0, 0.36), 0.0);
        assert_relative_eq!(production(4.0, 9.0, 0.5), 6.0, max_relative = 1e-14);
        assert_relative_eq!(wage_rate(3.0, 3.0, 0.36).unwrap(), 0.64, max_relative = 1e-14);
        assert_relative_eq!(wage_rate(7.0, 2.0, 1e-12).unwrap(), 1.0, max_relative = 1e-9);
        assert_relative_eq!(wage_rate(8.0, 2.0, 0.5).unwrap(), 1.0, max_relative = 1e-14);
        assert!(wage_rate(1.0, 0.0, 0.36).is_err());
    }

    #[test]
    fn fiscal_examples() {
        assert_eq!(debt_update(100.0, 0.0, 0.0, 0.0), 100.0);
        assert_eq!(debt_update(0.0, 10.0, 10.0, 0.04), 0.0);
        assert_relative_eq!(debt_update(50.0, 12.0, 7.0, 0.04), 57.0, max_relative = 1e-14);

        assert_relative_eq!(
            intermediary_capital(42.0, 7.0, 7.0, 3.0, 3.0, 0.04),
            0.04 * 42.0,
            max_relative = 1e-14
        );
        assert_eq!(intermediary_capital(99.0, 0.0, 10.0, 0.0, 10.0, 0.0), 0.0);
    }

    #[test]
    fn flow_examples() {
        assert_eq!(capital_flow(0.2, 0.2, 55.0, 0.7), 0.0);
        assert_eq!(capital_flow(0.9, 0.1, 55.0, 0.0), 0.0);
        assert_relative_eq!(capital_flow(0.3, 0.2, 100.0, 0.5), -5.0, max_relative = 1e-12);
        assert_eq!(real_capital(10.0, 0.0), 10.0);
        assert_eq!(real_capital(10.0, -3.0), 7.0);

        let taxes = [0.1, 0.3];
        let tau_bar = (taxes[0] + taxes[1]) / 2.0;
        let total: f64 = taxes
            .iter()
            .map(|&t| real_capital(50.0, capital_flow(t, tau_bar, 50.0, 0.8)))
            .sum();
        assert_eq!(total, 100.0);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(gini(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.25);
        assert_relative_eq!(gini(&[0.0, 0.0, 0.0, 10.0]).unwrap(), 0.75, max_relative = 1e-15);
        assert_eq!(gini(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[3.0]).unwrap(), 0.0);
        assert!(gini(&[]).is_err());
        assert!(gini(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_relative_eq!(household_reward(1.0, 0.0, 2.0, 2.0), -1.0, max_relative = 1e-15);
        assert_relative_eq!(household_reward(1.0, 1.0, 0.5, 1.0), 1.5, max_relative = 1e-15);
        assert_relative_eq!(
            household_reward(CONSUMPTION_FLOOR, 0.0, 2.0, 1.0),
            -1.0 / CONSUMPTION_FLOOR,
            max_relative = 1e-12
        );
        assert!(household_reward(0.0, 0.0, 2.0, 1.0).is_finite());

        assert_eq!(government_reward(1.0, 0.4), 0.0);
        assert_eq!(government_reward(std::f64::consts::E, 1.0), 0.0);
        assert_relative_eq!(
            government_reward(std::f64::consts::E.powi(2), 0.25),
            1.5,
            max_relative = 1e-14
        );
        assert!(government_reward(0.0, 0.0).is_finite());
    }

    #[test]
    fn params_validation() {
        assert!(EconParams::default().validate().is_ok());
        let mut p = EconParams::default();
        p.theta_crra = 1.0;
        assert!(p.validate().is_err());
        p = EconParams::default();
        p.alpha = 1.0;
        assert!(p.validate().is_err());
        p = EconParams::default();
        p.beta = 1.2;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn budget_identity(p in 0.0..=1.0f64, i in 0.0..100.0f64, a in 0.01..100.0f64,
                           tau_i in 0.0..0.99f64, xi_i in 0.0..0.99f64,
                           tau_a in 0.0..0.99f64, xi_a in 0.0..0.99f64, tau_s in 0.0..0.5f64) {
            let t_inc = tax_hsv(i.max(WEALTH_FLOOR), tau_i, xi_i).unwrap();
            let t_ast = tax_hsv(a, tau_a, xi_a).unwrap();
            let r = post_tax_resources(i, a, t_inc, t_ast);
            prop_assume!(r > 1e-3);
            let c = consumption_from_saving(p, i, a, t_inc, t_ast, tau_s).unwrap();
            let a_next = p * r;
            prop_assert!(((a_next + (1.0 + tau_s) * c) - r).abs() <= 1e-9 * r);
        }

        #[test]
        fn hsv_monotone_in_level(x in 1e-3..1e3f64, t1 in 0.0..0.99f64, t2 in 0.0..0.99f64, xi in 0.0..0.99f64) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(tax_hsv(x, lo, xi).unwrap() <= tax_hsv(x, hi, xi).unwrap());
            prop_assert_eq!(tax_hsv(x, 0.0, 0.0).unwrap(), 0.0);
        }

        #[test]
        fn gini_matches_pairwise(v in proptest::collection::vec(0.0..1e3f64, 1..200), scale in 1e-3..1e3f64) {
            let g = gini(&v).unwrap();
            let n = v.len() as f64;
            prop_assert!(g >= 0.0 && g <= (n - 1.0) / n + 1e-15);
            prop_assert!((g - pairwise_gini(&v)).abs() <= 1e-12);
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            prop_assert!((gini(&scaled).unwrap() - g).abs() <= 1e-12);
        }

        #[test]
        fn intermediary_identity(k in 0.0..1e3f64, b in -1e3..1e3f64, sa in 0.0..1e3f64,
                                 b2 in -1e3..1e3f64, sa2 in 0.0..1e3f64, r in 0.0..0.2f64) {
            let k2 = intermediary_capital(k, b, sa, b2, sa2, r);
            let lhs = k2 + b2 - sa2;
            let rhs = r * k + (1.0 + r) * (b - sa);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs().max(lhs.abs())));
        }

        #[test]
        fn cobb_douglas_homogeneity_and_euler(k in 1e-3..1e4f64, l in 1e-3..1e4f64, alpha in 0.01..0.99f64, lambda in 1e-2..1e2f64) {
            let y = production(k, l, alpha);
            let y_scaled = production(lambda * k, lambda * l, alpha);
            prop_assert!((y_scaled - lambda * y).abs() <= 1e-12 * (lambda * y));
            let w = wage_rate(k, l, alpha).unwrap();
            prop_assert!((w * l - (1.0 - alpha) * y).abs() <= 1e-12 * ((1.0 - alpha) * y));
        }

        #[test]
        fn flow_neutral_and_decoupled(taxes in proptest::collection::vec(0.0..0.99f64, 1..6), k in 0.0..1e4f64, phi in 0.0..1.0f64) {
            let tau_bar = taxes.iter().sum::<f64>() / taxes.len() as f64;
            let total: f64 = taxes.iter().map(|&t| capital_flow(t, tau_bar, k, phi)).sum();
            prop_assert!(total.abs() <= 1e-12 * k.max(1.0));
            for &t in &taxes {
                prop_assert_eq!(capital_flow(t, tau_bar, k, 0.0), 0.0);
            }
        }
    }
}
