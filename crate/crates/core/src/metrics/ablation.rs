//! Ablation grids: train every cell under several seeds and compare the
//! resulting indicators against a baseline cell.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Algorithm;
use crate::orchestrator::{Target, TrainConfig, Trainer};

use super::config::parse_toml;
use super::indicators::{compute_indicators, gdp_gap_reduction_pct, years_extension_pct, IndicatorSummary};
use super::runlog::{fmt_sig, rows_from_record, rows_from_stats, GiniMode, RunLogRow, RunLogWriter};

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Settings shared by every cell.
    #[serde(default)]
    pub base: TrainConfig,
    /// Cell the others are compared against.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub gini_mode: GiniMode,
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    #[serde(default)]
    pub curriculum: Option<bool>,
    #[serde(default)]
    pub sequential: Option<bool>,
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default)]
    pub two_phase: Option<bool>,
    #[serde(default)]
    pub episodes: Option<usize>,
}

impl CellSpec {
    pub fn config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut c = base.clone();
        if let Some(v) = self.curriculum {
            c.curriculum_enabled = v;
        }
        if let Some(v) = self.sequential {
            c.sequential_update_enabled = v;
        }
        if let Some(v) = self.algorithm {
            c.algorithm = v;
        }
        if let Some(v) = self.groups {
            c.groups = v;
        }
        if let Some(v) = self.two_phase {
            c.two_phase_enabled = v;
        }
        if let Some(v) = self.episodes {
            c.episodes = v;
        }
        c.seed = seed;
        c
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let spec: Self = parse_toml(text, origin)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("experiment has no cells".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment has no seeds".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if self.cells[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate cell name `{}`", c.name)));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid cell name `{}`", c.name)));
            }
        }
        if let Some(b) = &self.baseline {
            if !self.cells.iter().any(|c| &c.name == b) {
                return Err(Error::Config(format!("baseline `{b}` is not a cell")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub config: TrainConfig,
    /// `None` when every seed failed.
    pub summary: Option<IndicatorSummary>,
    pub failures: Vec<SeedFailure>,
    pub years_extension_pct: Option<f64>,
    pub gdp_gap_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline: Option<String>,
    pub cells: Vec<CellResult>,
}

impl AblationReport {
    pub fn cell(&self, name: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.name == name)
    }
}

/// Trains one seed of one cell and returns the rows of its final greedy evaluation.
pub fn run_cell_seed(cfg: &TrainConfig, mode: GiniMode, out: Option<&Path>) -> Result<Vec<RunLogRow>> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(RunLogWriter::create(&dir.join("run_log.csv"))?)
        }
        None => None,
    };
    let mut write_err = None;
    trainer.run(
        |rec| {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.append(&rows_from_record(rec, mode)) {
                    write_err.get_or_insert(e);
                }
            }
        },
        |_| {},
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    let phi = trainer.phi(trainer.next_episode);
    let evals = trainer.evaluate(cfg.eval_episodes.max(1), phi)?;
    let rows: Vec<RunLogRow> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, s)| rows_from_stats(i, s, Target::All, &[], mode))
        .collect();
    if let Some(dir) = out {
        super::runlog::write_run_log(&rows, &dir.join("eval.csv"))?;
    }
    Ok(rows)
}

/// Runs all `(cell, seed)` jobs on up to `workers` threads. A failing job is
/// recorded and does not stop the others. Results do not depend on `workers`.
pub fn run_ablation(spec: &ExperimentSpec, out_dir: Option<&Path>, workers: usize) -> Result<AblationReport> {
    spec.validate()?;
    let jobs: Vec<(usize, u64)> = spec
        .cells
        .iter()
        .enumerate()
        .flat_map(|(c, _)| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Mutex<Vec<Option<std::result::Result<Vec<RunLogRow>, String>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, seed)) = jobs.get(j) else { break };
                let cell = &spec.cells[c];
                let cfg = cell.config(&spec.base, seed);
                let dir: Option<PathBuf> = out_dir.map(|d| d.join(&cell.name).join(format!("seed{seed}")));
                let outcome = catch_unwind(AssertUnwindSafe(|| run_cell_seed(&cfg, spec.gini_mode, dir.as_deref())));
                let res = match outcome {
                    Ok(Ok(rows)) => Ok(rows),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(p) => Err(panic_message(p)),
                };
                results.lock().expect("results lock")[j] = Some(res);
            });
        }
    });

    let results = results.into_inner().expect("results lock");
    let mut cells = Vec::with_capacity(spec.cells.len());
    for (c, cell) in spec.cells.iter().enumerate() {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for ((jc, seed), res) in jobs.iter().zip(&results) {
            if *jc != c {
                continue;
            }
            match res.as_ref().expect("every job ran") {
                Ok(rows) => runs.push(rows.clone()),
                Err(e) => failures.push(SeedFailure { seed: *seed, error: e.clone() }),
            }
        }
        let summary = if runs.is_empty() { None } else { Some(compute_indicators(&runs)?) };
        cells.push(CellResult {
            name: cell.name.clone(),
            config: cell.config(&spec.base, spec.seeds[0]),
            summary,
            failures,
            years_extension_pct: None,
            gdp_gap_reduction_pct: None,
        });
    }

    if let Some(base_name) = &spec.baseline {
        let base = cells.iter().find(|c| &c.name == base_name).and_then(|c| c.summary.clone());
        if let Some(base) = base {
            for c in cells.iter_mut() {
                if let Some(s) = &c.summary {
                    c.years_extension_pct = Some(years_extension_pct(s, &base));
                    c.gdp_gap_reduction_pct = Some(gdp_gap_reduction_pct(s, &base));
                }
            }
        }
    }

    let report = AblationReport {
        baseline: spec.baseline.clone(),
        cells,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_comparison(&report, &dir.join("comparison.csv"))?;
        let p = dir.join("report.json");
        fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}

/// One row per cell with survival, per-group GDP and Ginis, and the relative
/// changes against the baseline.
pub fn write_comparison(report: &AblationReport, path: &Path) -> Result<()> {
    let groups = report
        .cells
        .iter()
        .filter_map(|c| c.summary.as_ref().map(|s| s.groups))
        .max()
        .unwrap_or(0);
    let mut header: Vec<String> = ["cell", "curriculum", "sequential", "algorithm", "groups", "seeds_ok", "seeds_failed", "years", "years_std"]
        .map(String::from)
        .to_vec();
    for prefix in ["gdp", "wealth_gini", "income_gini"] {
        header.extend((1..=groups).map(|g| format!("{prefix}_{g}")));
    }
    header.extend(["gdp_gap", "years_extension_pct", "gdp_gap_reduction_pct"].map(String::from));

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_io = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_io)?;
    let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
    for c in &report.cells {
        let mut rec = vec![
            c.name.clone(),
            c.config.curriculum_enabled.to_string(),
            c.config.sequential_update_enabled.to_string(),
            c.config.algorithm.to_string(),
            c.config.groups.to_string(),
            c.summary.as_ref().map(|s| s.seeds).unwrap_or(0).to_string(),
            c.failures.len().to_string(),
        ];
        let s = c.summary.as_ref();
        rec.push(opt(s.map(|s| s.years)));
        rec.push(opt(s.map(|s| s.years_std)));
        for field in [|s: &IndicatorSummary| s.gdp.clone(), |s: &IndicatorSummary| s.wealth_gini.clone(), |s: &IndicatorSummary| s.income_gini.clone()] {
            let v = s.map(field).unwrap_or_default();
            rec.extend((0..groups).map(|g| opt(v.get(g).copied())));
        }
        rec.push(opt(s.map(|s| s.gdp_gap)));
        rec.push(opt(c.years_extension_pct));
        rec.push(opt(c.gdp_gap_reduction_pct));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_base() -> TrainConfig {
        TrainConfig {
            groups: 2,
            households: 3,
            episode_length: 8,
            n_gov: 2,
            episodes: 3,
            hidden: 4,
            eval_episodes: 2,
            eval_interval: 0,
            ..Default::default()
        }
    }

    fn spec() -> ExperimentSpec {
        ExperimentSpec {
            base: tiny_base(),
            baseline: Some("plain".into()),
            seeds: vec![0, 1],
            gini_mode: GiniMode::Terminal,
            cells: vec![
                CellSpec {
                    name: "full".into(),
                    curriculum: Some(true),
                    sequential: Some(true),
                    algorithm: None,
                    groups: None,
                    two_phase: None,
                    episodes: None,
                },
                CellSpec {
                    name: "plain".into(),
                    curriculum: Some(false),
                    sequential: Some(false),
                    algorithm: None,
                    groups: None,
                    two_phase: None,
                    episodes: None,
                },
            ],
        }
    }

    #[test]
    fn parses_toml_spec() {
        let text = r#"
            baseline = "m4"
            seeds = [1, 2, 3]
            [base]
            households = 10
            episodes = 4
            [[cells]]
            name = "m1"
            algorithm = "a2c"
            [[cells]]
            name = "m4"
            curriculum = false
            sequential = false
        "#;
        let s = ExperimentSpec::parse(text, "spec").unwrap();
        assert_eq!(s.base.households, 10);
        assert_eq!(s.cells[0].config(&s.base, 7).algorithm, Algorithm::A2c);
        assert_eq!(s.cells[0].config(&s.base, 7).seed, 7);
        assert!(!s.cells[1].config(&s.base, 1).curriculum_enabled);
    }

    #[test]
    fn rejects_unknown_baseline_and_duplicates() {
        let mut s = spec();
        s.baseline = Some("nope".into());
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = spec();
        s.cells[1].name = "full".into();
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        assert!(ExperimentSpec::parse("[[cells]]\nname = \"a\"\nbogus = 1\n", "x").is_err());
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let s = spec();
        let a = run_ablation(&s, None, 1).unwrap();
        let b = run_ablation(&s, None, 3).unwrap();
        assert_eq!(a, b);
        let plain = a.cell("plain").unwrap();
        assert_eq!(plain.years_extension_pct, Some(0.0));
        assert!(plain.summary.as_ref().unwrap().years >= 1.0);
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut s = spec();
        s.cells[0].groups = Some(0);
        let dir = tempfile::tempdir().unwrap();
        let r = run_ablation(&s, Some(dir.path()), 2).unwrap();
        let full = r.cell("full").unwrap();
        assert_eq!(full.failures.len(), 2);
        assert!(full.summary.is_none());
        assert!(r.cell("plain").unwrap().summary.is_some());
        let text = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(dir.path().join("plain/seed1/run_log.csv").is_file());
        assert!(dir.path().join("plain/seed1/eval.csv").is_file());
    }
}
