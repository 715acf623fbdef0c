//! Per-episode, per-group run log in CSV.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{EpisodeRecord, EpisodeStats, Target};

pub const RUN_LOG_HEADER: [&str; 18] = [
    "episode",
    "group",
    "survived_steps",
    "gdp",
    "wealth_gini",
    "income_gini",
    "phi",
    "updated_group",
    "a1",
    "a2",
    "a3",
    "a4",
    "a5",
    "a6",
    "a7",
    "a8",
    "actor_loss",
    "critic_loss",
];

/// Which household distribution the Gini columns describe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GiniMode {
    /// Distribution at the last surviving step.
    #[default]
    Terminal,
    /// Average of the per-step Ginis over the episode.
    StepMean,
}

impl std::str::FromStr for GiniMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal" | "final" => Ok(GiniMode::Terminal),
            "step-mean" | "per-step" | "mean" => Ok(GiniMode::StepMean),
            other => Err(Error::Config(format!(
                "unknown gini mode `{other}` (expected terminal or step-mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub episode: usize,
    pub group: usize,
    pub survived_steps: usize,
    pub gdp: f64,
    pub wealth_gini: f64,
    pub income_gini: f64,
    pub phi: f64,
    /// Group updated after this episode, -1 for all groups.
    pub updated_group: i64,
    pub actions: [f64; 8],
    pub actor_loss: f64,
    pub critic_loss: f64,
}

impl RunLogRow {
    /// The row as it reads back from disk.
    pub fn rounded(&self) -> Self {
        Self {
            gdp: round_sig(self.gdp),
            wealth_gini: round_sig(self.wealth_gini),
            income_gini: round_sig(self.income_gini),
            phi: round_sig(self.phi),
            actions: self.actions.map(round_sig),
            actor_loss: round_sig(self.actor_loss),
            critic_loss: round_sig(self.critic_loss),
            ..self.clone()
        }
    }
}

/// Rows for one evaluation or training episode.
pub fn rows_from_stats(
    episode: usize,
    stats: &EpisodeStats,
    updated: Target,
    losses: &[(f64, f64)],
    mode: GiniMode,
) -> Vec<RunLogRow> {
    stats
        .groups
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let (wealth_gini, income_gini) = match mode {
                GiniMode::Terminal => (s.wealth_gini, s.income_gini),
                GiniMode::StepMean => (s.wealth_gini_mean, s.income_gini_mean),
            };
            let (actor_loss, critic_loss) = losses.get(g).copied().unwrap_or((0.0, 0.0));
            RunLogRow {
                episode,
                group: g,
                survived_steps: stats.survived_steps,
                gdp: s.gdp,
                wealth_gini,
                income_gini,
                phi: stats.phi,
                updated_group: updated.as_index(),
                actions: s.actions,
                actor_loss,
                critic_loss,
            }
        })
        .collect()
}

/// Rows of a training record. Losses are those of the group's government update,
/// zero for groups not updated this episode.
pub fn rows_from_record(rec: &EpisodeRecord, mode: GiniMode) -> Vec<RunLogRow> {
    let losses: Vec<(f64, f64)> = rec
        .losses
        .iter()
        .map(|l| l.gov.map(|s| (s.actor_loss, s.critic_loss)).unwrap_or((0.0, 0.0)))
        .collect();
    rows_from_stats(rec.episode, &rec.stats, rec.target, &losses, mode)
}

/// Rounds to 9 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Decimal text of `x` rounded to 9 significant digits.
pub fn fmt_sig(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn row_fields(r: &RunLogRow) -> Vec<String> {
    let mut f = vec![
        r.episode.to_string(),
        r.group.to_string(),
        r.survived_steps.to_string(),
        fmt_sig(r.gdp),
        fmt_sig(r.wealth_gini),
        fmt_sig(r.income_gini),
        fmt_sig(r.phi),
        r.updated_group.to_string(),
    ];
    f.extend(r.actions.iter().map(|a| fmt_sig(*a)));
    f.push(fmt_sig(r.actor_loss));
    f.push(fmt_sig(r.critic_loss));
    f
}

/// Incremental run-log writer; the header is written on creation.
pub struct RunLogWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl RunLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner
            .write_record(RUN_LOG_HEADER)
            .map_err(|e| csv_err(path, e))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    /// Appends to an existing log, writing the header only if the file is new or empty.
    pub fn open_append(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if fresh {
            return Self::create(path);
        }
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, rows: &[RunLogRow]) -> Result<()> {
        for r in rows {
            self.inner
                .write_record(row_fields(r))
                .map_err(|e| csv_err(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))?;
        let file = self.inner.into_inner().map_err(|e| Error::io(&self.path, e.into_error()))?;
        (&file).flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            detail: format!("{other:?}"),
        },
    }
}

pub fn write_run_log(rows: &[RunLogRow], path: &Path) -> Result<()> {
    let mut w = RunLogWriter::create(path)?;
    w.append(rows)?;
    w.finish()
}

pub fn read_run_log(path: &Path) -> Result<Vec<RunLogRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RUN_LOG_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            detail: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |col: &str, v: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail: format!("column {col}: cannot parse `{v}`"),
        };
        if rec.len() != RUN_LOG_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                detail: format!("expected {} fields, found {}", RUN_LOG_HEADER.len(), rec.len()),
            });
        }
        let uint = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(RUN_LOG_HEADER[i], &rec[i]));
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(RUN_LOG_HEADER[i], &rec[i]));
        let mut actions = [0.0; 8];
        for (k, a) in actions.iter_mut().enumerate() {
            *a = float(8 + k)?;
        }
        rows.push(RunLogRow {
            episode: uint(0)?,
            group: uint(1)?,
            survived_steps: uint(2)?,
            gdp: float(3)?,
            wealth_gini: float(4)?,
            income_gini: float(5)?,
            phi: float(6)?,
            updated_group: rec[7].parse::<i64>().map_err(|_| bad(RUN_LOG_HEADER[7], &rec[7]))?,
            actions,
            actor_loss: float(16)?,
            critic_loss: float(17)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_row(rng: &mut ChaCha8Rng) -> RunLogRow {
        let mut f = || {
            let mag = 10f64.powi(rng.random_range(-6..7));
            rng.random_range(-1.0..1.0) * mag
        };
        RunLogRow {
            episode: 0,
            group: 1,
            survived_steps: 17,
            gdp: f(),
            wealth_gini: f(),
            income_gini: f(),
            phi: f(),
            updated_group: -1,
            actions: [f(), f(), f(), f(), f(), f(), f(), f()],
            actor_loss: f(),
            critic_loss: f(),
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_run_log(&[], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim_end(), RUN_LOG_HEADER.join(","));
        assert!(read_run_log(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_at_nine_digits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<RunLogRow> = (0..100)
            .map(|i| RunLogRow {
                episode: i,
                ..random_row(&mut rng)
            })
            .collect();
        write_run_log(&rows, &p).unwrap();
        let back = read_run_log(&p).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(&a.rounded(), b);
            // independent check: relative difference within half a unit in the 9th digit
            let rel = (a.gdp - b.gdp).abs() / a.gdp.abs();
            assert!(rel <= 5e-9, "{} vs {}", a.gdp, b.gdp);
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        write_run_log(&[random_row(&mut rng), random_row(&mut rng)], &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("3,0,x,1,1,1,1,0,1,1,1,1,1,1,1,1,1,1\n");
        std::fs::write(&p, text).unwrap();
        match read_run_log(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(123456789012.0), "123456789000");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(-2.5e-7), "-0.00000025");
    }
}
