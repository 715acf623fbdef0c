use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::runlog::RunLogRow;

/// Summary indicators over several seeds. Ginis are scaled by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSummary {
    pub seeds: usize,
    pub groups: usize,
    /// Mean survived steps (one step is one year).
    pub years: f64,
    /// Standard deviation of the per-seed mean survival.
    pub years_std: f64,
    pub gdp: Vec<f64>,
    pub wealth_gini: Vec<f64>,
    pub income_gini: Vec<f64>,
    /// Largest minus smallest group GDP.
    pub gdp_gap: f64,
    pub actions: Vec<[f64; 8]>,
}

#[derive(Default, Clone)]
struct Acc {
    gdp: f64,
    wg: f64,
    ig: f64,
    actions: [f64; 8],
    n: usize,
}

/// Aggregates run logs, one per seed. Within a seed every distinct episode
/// counts once; across seeds the per-seed means are averaged.
pub fn compute_indicators(runs: &[Vec<RunLogRow>]) -> Result<IndicatorSummary> {
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(Error::Usage("no run-log rows to summarize".into()));
    }
    let groups = runs
        .iter()
        .flat_map(|r| r.iter().map(|row| row.group + 1))
        .max()
        .unwrap_or(0);

    let mut years_per_seed = Vec::with_capacity(runs.len());
    let mut per_seed: Vec<Vec<Acc>> = Vec::with_capacity(runs.len());
    for rows in runs {
        let mut episodes: BTreeMap<usize, usize> = BTreeMap::new();
        let mut acc = vec![Acc::default(); groups];
        for r in rows {
            episodes.insert(r.episode, r.survived_steps);
            let a = &mut acc[r.group];
            a.gdp += r.gdp;
            a.wg += r.wealth_gini;
            a.ig += r.income_gini;
            for (s, x) in a.actions.iter_mut().zip(r.actions) {
                *s += x;
            }
            a.n += 1;
        }
        let years = episodes.values().map(|&s| s as f64).sum::<f64>() / episodes.len() as f64;
        years_per_seed.push(years);
        for a in acc.iter_mut() {
            if a.n == 0 {
                return Err(Error::Usage("a group is missing from one of the run logs".into()));
            }
            let n = a.n as f64;
            a.gdp /= n;
            a.wg /= n;
            a.ig /= n;
            for x in a.actions.iter_mut() {
                *x /= n;
            }
        }
        per_seed.push(acc);
    }

    let s = runs.len() as f64;
    let years = years_per_seed.iter().sum::<f64>() / s;
    let years_std = (years_per_seed.iter().map(|y| (y - years).powi(2)).sum::<f64>() / s).sqrt();
    let mut gdp = vec![0.0; groups];
    let mut wealth_gini = vec![0.0; groups];
    let mut income_gini = vec![0.0; groups];
    let mut actions = vec![[0.0; 8]; groups];
    for acc in &per_seed {
        for (g, a) in acc.iter().enumerate() {
            gdp[g] += a.gdp / s;
            wealth_gini[g] += 100.0 * a.wg / s;
            income_gini[g] += 100.0 * a.ig / s;
            for (t, x) in actions[g].iter_mut().zip(a.actions) {
                *t += x / s;
            }
        }
    }
    let max = gdp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = gdp.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(IndicatorSummary {
        seeds: runs.len(),
        groups,
        years,
        years_std,
        gdp,
        wealth_gini,
        income_gini,
        gdp_gap: max - min,
        actions,
    })
}

/// Relative change of survival over a baseline, in percent.
pub fn years_extension_pct(candidate: &IndicatorSummary, baseline: &IndicatorSummary) -> f64 {
    100.0 * (candidate.years - baseline.years) / baseline.years
}

/// Relative reduction of the GDP gap against a baseline, in percent.
pub fn gdp_gap_reduction_pct(candidate: &IndicatorSummary, baseline: &IndicatorSummary) -> f64 {
    100.0 * (baseline.gdp_gap - candidate.gdp_gap) / baseline.gdp_gap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(episode: usize, group: usize, steps: usize, gdp: f64, wg: f64) -> RunLogRow {
        RunLogRow {
            episode,
            group,
            survived_steps: steps,
            gdp,
            wealth_gini: wg,
            income_gini: wg / 2.0,
            phi: 1.0,
            updated_group: -1,
            actions: [group as f64; 8],
            actor_loss: 0.0,
            critic_loss: 0.0,
        }
    }

    #[test]
    fn empty_is_usage_error() {
        assert!(matches!(compute_indicators(&[]), Err(Error::Usage(_))));
        assert!(matches!(compute_indicators(&[vec![]]), Err(Error::Usage(_))));
    }

    #[test]
    fn hand_computed_summary() {
        let seed_a = vec![
            row(0, 0, 100, 10.0, 0.4),
            row(0, 1, 100, 4.0, 0.6),
            row(1, 0, 200, 12.0, 0.4),
            row(1, 1, 200, 6.0, 0.6),
        ];
        let seed_b = vec![row(0, 0, 50, 8.0, 0.2), row(0, 1, 50, 8.0, 0.2)];
        let s = compute_indicators(&[seed_a, seed_b]).unwrap();
        // seed a: years 150, gdp (11, 5); seed b: years 50, gdp (8, 8)
        assert_eq!(s.years, 100.0);
        assert_eq!(s.years_std, 50.0);
        assert_eq!(s.gdp, vec![9.5, 6.5]);
        assert!((s.gdp_gap - 3.0).abs() < 1e-12);
        assert!((s.wealth_gini[0] - 30.0).abs() < 1e-12);
        assert!((s.wealth_gini[1] - 40.0).abs() < 1e-12);
        assert!((s.income_gini[1] - 20.0).abs() < 1e-12);
        assert_eq!(s.actions[1], [1.0; 8]);
    }

    #[test]
    fn relative_changes() {
        let mk = |years, gap| IndicatorSummary {
            seeds: 1,
            groups: 2,
            years,
            years_std: 0.0,
            gdp: vec![],
            wealth_gini: vec![],
            income_gini: vec![],
            gdp_gap: gap,
            actions: vec![],
        };
        let base = mk(80.0, 10.0);
        let cand = mk(200.0, 3.0);
        assert_eq!(years_extension_pct(&cand, &base), 150.0);
        assert_eq!(gdp_gap_reduction_pct(&cand, &base), 70.0);
    }
}
