//! Command-line front end: simulate, train, ablate, eval and replay.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    compute_indicators, load_config, rows_from_record, rows_from_stats, run_ablation, write_run_log, ExperimentSpec,
    GiniMode, IndicatorSummary, RunLogRow, RunLogWriter,
};
use crate::orchestrator::{
    random_actions, run_from_observed, ActionMode, EpisodeOptions, Target, TrainConfig, Trainer,
};
use crate::seeding::{self, domain};
use crate::world::{RawGovAction, RawHouseholdAction, StepResult, WorldState};

pub const SEED_ENV: &str = "FISCAL_ARENA_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "fiscal-arena", version, about = "Multi-group fiscal policy simulator with learning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out episodes without learning and log every step.
    Simulate(SimulateArgs),
    /// Train governments and households.
    Train(TrainArgs),
    /// Run an ablation grid described by a TOML file.
    Ablate(AblateArgs),
    /// Greedy evaluation of a saved checkpoint.
    Eval(EvalArgs),
    /// Re-run a simulated episode from its snapshot and action log.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    households: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    quiet: bool,
    /// `terminal` or `step-mean`.
    #[arg(long, default_value = "terminal")]
    gini_mode: GiniMode,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Act greedily with the policies of this checkpoint instead of uniformly at random.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Capital mobility, 1 by default.
    #[arg(long)]
    phi: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from `<out-dir>/checkpoint` if it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Experiment description.
    spec: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Training episodes per cell, overriding the file.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    phi: Option<f64>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    actions: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn apply_overrides(mut cfg: TrainConfig, c: &Common) -> Result<TrainConfig> {
    if let Some(s) = env_seed()?.or(c.seed) {
        cfg.seed = s;
    }
    if let Some(g) = c.groups {
        cfg.groups = g;
    }
    if let Some(m) = c.households {
        cfg.households = m;
    }
    if let Some(k) = c.episodes {
        cfg.episodes = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn base_config(c: &Common) -> Result<TrainConfig> {
    let cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    apply_overrides(cfg, c)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn print_summary(label: &str, s: &IndicatorSummary) {
    println!(
        "{label}: years {:.1}  gdp {:?}  wealth gini {:?}  income gini {:?}  gdp gap {:.3}",
        s.years,
        s.gdp.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(),
        s.wealth_gini.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>(),
        s.income_gini.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>(),
        s.gdp_gap
    );
}

/// One line of `actions.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct ActionLine {
    t: usize,
    gov: Vec<RawGovAction>,
    households: Vec<Vec<RawHouseholdAction>>,
}

const STEP_HEADER: [&str; 18] = [
    "t",
    "group",
    "output",
    "wage",
    "effective_labor",
    "capital",
    "debt",
    "spending",
    "tax_revenue",
    "flow",
    "wealth_gini",
    "income_gini",
    "mean_saving_ratio",
    "mean_hours",
    "gov_reward",
    "mean_household_reward",
    "done",
    "termination",
];

struct StepLog {
    w: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl StepLog {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(STEP_HEADER).map_err(|e| csv_error(path, e))?;
        Ok(Self {
            w,
            path: path.to_path_buf(),
        })
    }

    /// Full-precision values so replays can be compared byte for byte.
    fn push(&mut self, t: usize, r: &StepResult) -> Result<()> {
        let term = r.termination.map(|x| format!("{x:?}")).unwrap_or_default();
        for (g, info) in r.info.iter().enumerate() {
            let hh = &r.household_rewards[g];
            let rec = [
                t.to_string(),
                g.to_string(),
                info.output.to_string(),
                info.wage.to_string(),
                info.effective_labor.to_string(),
                info.capital_real.to_string(),
                info.debt.to_string(),
                info.spending.to_string(),
                info.tax_revenue.to_string(),
                info.flow.to_string(),
                info.wealth_gini.to_string(),
                info.income_gini.to_string(),
                info.mean_saving_ratio.to_string(),
                info.mean_hours.to_string(),
                r.gov_rewards[g].to_string(),
                (hh.iter().sum::<f64>() / hh.len() as f64).to_string(),
                r.done.to_string(),
                term.clone(),
            ];
            self.w.write_record(&rec).map_err(|e| csv_error(&self.path, e))?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Usage(format!("{}: {other:?}", path.display())),
    }
}

struct EpisodeFiles {
    steps: StepLog,
    actions: BufWriter<File>,
    actions_path: PathBuf,
}

impl EpisodeFiles {
    fn create(dir: &Path, world: &WorldState) -> Result<Self> {
        create_dir(dir)?;
        let snap = dir.join("snapshot.json");
        fs::write(&snap, world.to_json()?).map_err(|e| Error::io(&snap, e))?;
        let actions_path = dir.join("actions.jsonl");
        let f = File::create(&actions_path).map_err(|e| Error::io(&actions_path, e))?;
        Ok(Self {
            steps: StepLog::create(&dir.join("steps.csv"))?,
            actions: BufWriter::new(f),
            actions_path,
        })
    }

    fn record(&mut self, t: usize, gov: &[RawGovAction], hh: &[Vec<RawHouseholdAction>], r: &StepResult) -> Result<()> {
        let line = ActionLine {
            t,
            gov: gov.to_vec(),
            households: hh.to_vec(),
        };
        serde_json::to_writer(&mut self.actions, &line)?;
        writeln!(self.actions).map_err(|e| Error::io(&self.actions_path, e))?;
        self.steps.push(t, r)
    }

    fn finish(mut self) -> Result<()> {
        self.actions.flush().map_err(|e| Error::io(&self.actions_path, e))?;
        self.steps.finish()
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (mut cfg, agents) = match &a.checkpoint {
        Some(dir) => {
            let m = Trainer::read_manifest(dir)?;
            let cfg = apply_overrides(m.config, &a.common)?;
            let agents = Trainer::load_agents(dir, cfg.groups)?;
            (cfg, Some(agents))
        }
        None => (base_config(&a.common)?, None),
    };
    if a.common.episodes.is_none() {
        cfg.episodes = 1;
    }
    let phi = a.phi.unwrap_or(1.0);
    let out = &a.common.out_dir;
    create_dir(out)?;
    let world_cfg = cfg.world_config();
    let mut summary_rows = Vec::new();
    for e in 0..cfg.episodes {
        let seed = seeding::derive_seed(cfg.seed, domain::SIMULATE, e as u64);
        let (mut world, mut obs) = WorldState::reset(&world_cfg, seed)?;
        world.set_phi(phi)?;
        let mut files = EpisodeFiles::create(&out.join(format!("episode{e}")), &world)?;
        let mut failure = None;
        let stats = match &agents {
            Some(agents) => {
                let opts = EpisodeOptions {
                    phi,
                    n_gov: cfg.n_gov,
                    mode: ActionMode::Greedy,
                    gov_sampled_dims: None,
                    collect: false,
                };
                let mut t = 0;
                let (_, stats) = run_from_observed(&mut world, &mut obs, agents, seed, &opts, &mut |g, h, r| {
                    if failure.is_none() {
                        failure = files.record(t, g, h, r).err();
                    }
                    t += 1;
                })?;
                stats
            }
            None => random_episode(&mut world, seed, &mut files, &mut failure)?,
        };
        if let Some(err) = failure {
            return Err(err);
        }
        files.finish()?;
        summary_rows.extend(rows_from_stats(e, &stats, Target::All, &[], a.common.gini_mode));
        if !a.common.quiet {
            println!("episode {e}: survived {} steps ({:?})", stats.survived_steps, stats.termination);
        }
    }
    write_run_log(&summary_rows, &out.join("run_log.csv"))
}

fn random_episode(
    world: &mut WorldState,
    seed: u64,
    files: &mut EpisodeFiles,
    failure: &mut Option<Error>,
) -> Result<crate::orchestrator::EpisodeStats> {
    let n = world.n_groups();
    let m = world.n_households();
    let mut rngs: Vec<_> = (0..n).map(|g| seeding::stream(seed, domain::GOV_SAMPLING, g as u64)).collect();
    let mut survived = 0;
    let mut gdp = vec![0.0; n];
    let mut last: Option<StepResult> = None;
    let mut wg_sum = vec![0.0; n];
    let mut ig_sum = vec![0.0; n];
    let mut actions = vec![[0.0; 8]; n];
    while !world.is_done() {
        let t = world.t;
        let (gov, hh) = random_actions(&mut rngs, m);
        let r = world.step(&gov, &hh)?;
        if failure.is_none() {
            *failure = files.record(t, &gov, &hh, &r).err();
        }
        survived += 1;
        for (g, info) in r.info.iter().enumerate() {
            gdp[g] += info.output;
            wg_sum[g] += info.wealth_gini;
            ig_sum[g] += info.income_gini;
            let d = info.gov_action.to_array();
            for (k, x) in d.iter().enumerate() {
                actions[g][k] += x;
            }
            actions[g][6] += info.mean_saving_ratio;
            actions[g][7] += info.mean_hours;
        }
        last = Some(r);
    }
    let k = survived.max(1) as f64;
    let groups = (0..n)
        .map(|g| {
            let info = last.as_ref().map(|r| &r.info[g]);
            crate::orchestrator::GroupEpisodeStats {
                gdp: gdp[g] / k,
                wealth_gini: info.map(|i| i.wealth_gini).unwrap_or(0.0),
                income_gini: info.map(|i| i.income_gini).unwrap_or(0.0),
                wealth_gini_mean: wg_sum[g] / k,
                income_gini_mean: ig_sum[g] / k,
                actions: actions[g].map(|x| x / k),
                gov_return: 0.0,
                household_return: 0.0,
            }
        })
        .collect();
    Ok(crate::orchestrator::EpisodeStats {
        survived_steps: survived,
        termination: world.termination,
        phi: world.phi,
        groups,
    })
}

fn replay(a: ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&a.snapshot).map_err(|e| Error::io(&a.snapshot, e))?;
    let mut world = WorldState::from_json(&text)?;
    let file = File::open(&a.actions).map_err(|e| Error::io(&a.actions, e))?;
    create_dir(&a.out_dir)?;
    let mut steps = StepLog::create(&a.out_dir.join("steps.csv"))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&a.actions, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ActionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: a.actions.clone(),
            line: i as u64 + 1,
            detail: e.to_string(),
        })?;
        if rec.t != world.t {
            return Err(Error::Usage(format!(
                "action log line {} is for step {}, the world is at step {}",
                i + 1,
                rec.t,
                world.t
            )));
        }
        let r = world.step(&rec.gov, &rec.households)?;
        steps.push(rec.t, &r)?;
    }
    steps.finish()
}

fn train(a: TrainArgs) -> Result<()> {
    let out = a.common.out_dir.clone();
    let ckpt = out.join("checkpoint");
    create_dir(&out)?;
    let resuming = a.resume && ckpt.join("manifest.json").is_file();
    let mut trainer = if resuming {
        let mut t = Trainer::resume(&ckpt)?;
        if let Some(k) = a.common.episodes {
            t.cfg.episodes = k;
        }
        t
    } else {
        Trainer::new(base_config(&a.common)?)?
    };
    trainer.dump_dir = Some(out.join("dumps"));
    write_json(&out.join("config.json"), &trainer.cfg)?;

    let mode = a.common.gini_mode;
    let quiet = a.common.quiet;
    let run_log = out.join("run_log.csv");
    let mut log = if resuming {
        RunLogWriter::open_append(&run_log)?
    } else {
        RunLogWriter::create(&run_log)?
    };
    let eval_path = out.join("eval_log.csv");
    let mut eval_log = if resuming {
        RunLogWriter::open_append(&eval_path)?
    } else {
        RunLogWriter::create(&eval_path)?
    };
    let total = trainer.cfg.episodes;
    let every = (total / 20).max(1);
    let mut failure: Option<Error> = None;
    let mut pending_eval: Vec<RunLogRow> = Vec::new();
    let cfg = trainer.cfg.clone();

    // Train in chunks between evaluations so checkpoints line up with them.
    while trainer.next_episode < total {
        let stop = if cfg.eval_interval > 0 {
            ((trainer.next_episode / cfg.eval_interval + 1) * cfg.eval_interval).min(total)
        } else {
            total
        };
        trainer.cfg.episodes = stop;
        trainer.run(
            |rec| {
                if failure.is_none() {
                    failure = log.append(&rows_from_record(rec, mode)).err();
                }
                if !quiet && (rec.episode + 1) % every == 0 {
                    let g0 = &rec.stats.groups[0];
                    println!(
                        "episode {:>6}  phi {:.3}  survived {:>4}  gdp[0] {:.4}  target {}",
                        rec.episode + 1,
                        rec.phi,
                        rec.stats.survived_steps,
                        g0.gdp,
                        rec.target.as_index()
                    );
                }
            },
            |ev| {
                for s in &ev.episodes {
                    pending_eval.extend(rows_from_stats(ev.after_episode, s, Target::All, &[], mode));
                }
            },
        )?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        eval_log.append(&pending_eval)?;
        pending_eval.clear();
        trainer.cfg.episodes = total;
        trainer.save_checkpoint(&ckpt)?;
    }
    trainer.cfg.episodes = total;
    trainer.save_checkpoint(&ckpt)?;
    log.finish()?;
    eval_log.finish()?;

    let phi = trainer.phi(trainer.next_episode);
    let evals = trainer.evaluate(cfg.eval_episodes.max(1), phi)?;
    let rows: Vec<RunLogRow> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, s)| rows_from_stats(i, s, Target::All, &[], mode))
        .collect();
    write_run_log(&rows, &out.join("final_eval.csv"))?;
    let summary = compute_indicators(&[rows])?;
    write_json(&out.join("indicators.json"), &summary)?;
    if !quiet {
        print_summary("final evaluation", &summary);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let m = Trainer::read_manifest(&a.checkpoint)?;
    let mut cfg = m.config.clone();
    let episodes = a.common.episodes.unwrap_or(cfg.eval_episodes.max(1));
    cfg.episodes = m.next_episode;
    let cfg = apply_overrides(
        cfg,
        &Common {
            episodes: None,
            ..a.common.clone()
        },
    )?;
    let agents = Trainer::load_agents(&a.checkpoint, cfg.groups)?;
    let trainer = Trainer {
        cfg,
        agents,
        next_episode: m.next_episode,
        dump_dir: None,
    };
    let phi = a.phi.unwrap_or(m.phi);
    let evals = trainer.evaluate(episodes, phi)?;
    let rows: Vec<RunLogRow> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, s)| rows_from_stats(i, s, Target::All, &[], a.common.gini_mode))
        .collect();
    create_dir(&a.common.out_dir)?;
    write_run_log(&rows, &a.common.out_dir.join("eval.csv"))?;
    let summary = compute_indicators(&[rows])?;
    write_json(&a.common.out_dir.join("indicators.json"), &summary)?;
    if !a.common.quiet {
        print_summary("evaluation", &summary);
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(k) = a.episodes {
        spec.base.episodes = k;
        for c in spec.cells.iter_mut() {
            c.episodes = None;
        }
    }
    if let Some(s) = env_seed()? {
        spec.seeds = (s..s + spec.seeds.len() as u64).collect();
    }
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let report = run_ablation(&spec, Some(&a.out_dir), workers)?;
    for c in &report.cells {
        for f in &c.failures {
            eprintln!("cell {} seed {} failed: {}", c.name, f.seed, f.error);
        }
        if !a.quiet {
            if let Some(s) = &c.summary {
                print_summary(&c.name, s);
                if let (Some(y), Some(g)) = (c.years_extension_pct, c.gdp_gap_reduction_pct) {
                    println!("    vs baseline: years {y:+.1}%  gdp gap reduction {g:+.1}%");
                }
            }
        }
    }
    if report.cells.iter().all(|c| c.summary.is_none()) {
        return Err(Error::NonFinite {
            context: "ablation: every cell failed".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["fiscal-arena"]), EXIT_CONFIG);
        assert_eq!(run(["fiscal-arena", "bogus"]), EXIT_CONFIG);
        assert_eq!(run(["fiscal-arena", "train", "--no-such-flag"]), EXIT_CONFIG);
        assert_eq!(run(["fiscal-arena", "--help"]), EXIT_OK);
    }

    #[test]
    fn bad_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, "gamma = 2.0\n").unwrap();
        let out = dir.path().join("o");
        let code = run([
            "fiscal-arena",
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn replay_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let sim = dir.path().join("sim");
        let code = run([
            "fiscal-arena",
            "simulate",
            "--groups",
            "2",
            "--households",
            "5",
            "--seed",
            "3",
            "--out-dir",
            sim.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(code, EXIT_OK);
        let ep = sim.join("episode0");
        let rep = dir.path().join("rep");
        let code = run([
            "fiscal-arena",
            "replay",
            "--snapshot",
            ep.join("snapshot.json").to_str().unwrap(),
            "--actions",
            ep.join("actions.jsonl").to_str().unwrap(),
            "--out-dir",
            rep.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let a = fs::read(ep.join("steps.csv")).unwrap();
        let b = fs::read(rep.join("steps.csv")).unwrap();
        assert!(a.len() > 100);
        assert_eq!(a, b);
    }
}
