//! The training loop: curriculum, target-group selection, rollout, update.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::checkpoint::{load_optimizer, load_params, save_optimizer, save_params};
use crate::learners::{build_batch, update, Batch, Learner, RolloutBuffer, UpdateStats};
use crate::seeding::{self, domain};

use super::config::{Role, TrainConfig};
use super::rollout::{run_episode, ActionMode, Agents, EpisodeOptions, EpisodeStats, INTER_DIMS, INTRA_DIMS};
use super::schedule::{curriculum_phi, select_target_group, Target};

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupLosses {
    pub gov: Option<UpdateStats>,
    pub household: Option<UpdateStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub phi: f64,
    pub target: Target,
    pub stats: EpisodeStats,
    pub losses: Vec<GroupLosses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Number of training episodes completed before this evaluation.
    pub after_episode: usize,
    pub phi: f64,
    pub episodes: Vec<EpisodeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Index of the next episode to run.
    pub next_episode: usize,
    pub phi: f64,
    pub seed: u64,
    /// Seed of the next episode's environment and sampling streams. All streams
    /// are derived from `(seed, episode)`, so this is the complete random state.
    pub next_episode_seed: u64,
    pub config: TrainConfig,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub agents: Agents,
    pub next_episode: usize,
    /// Where a failing batch is written when an update produces non-finite values.
    pub dump_dir: Option<PathBuf>,
}

fn episode_seed(master: u64, k: usize) -> u64 {
    seeding::derive_seed(master, domain::EPISODE, k as u64)
}

fn not_mask(dims: &[usize], len: usize) -> Vec<bool> {
    (0..len).map(|d| !dims.contains(&d)).collect()
}

fn only_mask(dims: &[usize], len: usize) -> Vec<bool> {
    (0..len).map(|d| dims.contains(&d)).collect()
}

#[derive(Serialize)]
struct BatchDump {
    context: String,
    obs: Vec<Vec<f64>>,
    pre_squash: Vec<Vec<f64>>,
    old_log_prob: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            agents: Agents::new(&cfg),
            cfg,
            next_episode: 0,
            dump_dir: None,
        })
    }

    pub fn phi(&self, k: usize) -> f64 {
        curriculum_phi(k, self.cfg.curriculum_rate, self.cfg.curriculum_enabled)
    }

    fn update_learner(
        &self,
        learner: &mut Learner,
        batch: &Batch,
        role: Role,
        actor_mask: Option<&[bool]>,
        rng_domain: u64,
        k: usize,
        g: usize,
    ) -> Result<UpdateStats> {
        let mut rng = seeding::stream(episode_seed(self.cfg.seed, k), rng_domain, g as u64);
        match update(learner, batch, &self.cfg.update_config(role), actor_mask, &mut rng) {
            Err(Error::NonFinite { context }) => {
                let context = format!("{context}; episode {k}, group {g}, {role:?}");
                let dumped = self.dump_batch(batch, &context, k, g, role);
                Err(Error::NonFinite {
                    context: match dumped {
                        Some(p) => format!("{context}; batch written to {}", p.display()),
                        None => context,
                    },
                })
            }
            other => other,
        }
    }

    fn dump_batch(&self, batch: &Batch, context: &str, k: usize, g: usize, role: Role) -> Option<PathBuf> {
        let dir = self.dump_dir.as_ref()?;
        let path = dir.join(format!("nonfinite_batch_e{k}_g{g}_{role:?}.json").to_lowercase());
        let dump = BatchDump {
            context: context.to_string(),
            obs: batch.obs.rows().into_iter().map(|r| r.to_vec()).collect(),
            pre_squash: batch.pre_squash.rows().into_iter().map(|r| r.to_vec()).collect(),
            old_log_prob: batch.old_log_prob.to_vec(),
            advantages: batch.advantages.to_vec(),
            returns: batch.returns.to_vec(),
        };
        let text = serde_json::to_string(&dump).ok()?;
        fs::create_dir_all(dir).ok()?;
        fs::write(&path, text).ok().map(|_| path)
    }

    /// Builds batches from `buffer` and updates the listed roles of group `g`.
    #[allow(clippy::too_many_arguments)]
    fn update_group(
        &mut self,
        buffer: &mut RolloutBuffer,
        g: usize,
        k: usize,
        gov_action_mask: Option<Vec<bool>>,
        gov_actor_mask: Option<Vec<bool>>,
        update_households: bool,
    ) -> Result<GroupLosses> {
        let (gamma, lambda) = (self.cfg.gamma, self.cfg.gae_lambda);
        let mut losses = GroupLosses::default();

        let gov_batch = build_batch(&mut [&mut buffer.gov[g]], &self.agents.gov[g].params, gamma, lambda, gov_action_mask)?;
        let mut learner = self.agents.gov[g].clone();
        losses.gov = Some(self.update_learner(&mut learner, &gov_batch, Role::Government, gov_actor_mask.as_deref(), domain::GOV_UPDATE, k, g)?);
        self.agents.gov[g] = learner;

        if update_households {
            let mut trajs: Vec<&mut Vec<_>> = buffer.households[g].iter_mut().collect();
            let hh_batch = build_batch(&mut trajs, &self.agents.households[g].params, gamma, lambda, None)?;
            let mut learner = self.agents.households[g].clone();
            losses.household = Some(self.update_learner(&mut learner, &hh_batch, Role::Household, None, domain::HH_UPDATE, k, g)?);
            self.agents.households[g] = learner;
        }
        Ok(losses)
    }

    fn episode_options(&self, phi: f64, gov_sampled_dims: Option<Vec<bool>>) -> EpisodeOptions {
        EpisodeOptions {
            phi,
            n_gov: self.cfg.n_gov,
            mode: ActionMode::Sample,
            gov_sampled_dims,
            collect: true,
        }
    }

    /// Runs and learns from one training episode.
    pub fn train_episode(&mut self) -> Result<EpisodeRecord> {
        let k = self.next_episode;
        let record = if self.cfg.two_phase_enabled {
            self.two_phase_episode(k)?
        } else {
            let phi = self.phi(k);
            let target = select_target_group(k, self.cfg.groups, self.cfg.sequential_update_enabled);
            let seed = episode_seed(self.cfg.seed, k);
            let (mut buffer, stats) =
                run_episode(&self.cfg.world_config(), &self.agents, seed, seed, &self.episode_options(phi, None))?;
            let mut losses = vec![GroupLosses::default(); self.cfg.groups];
            for (g, slot) in losses.iter_mut().enumerate() {
                if target.includes(g) {
                    *slot = self.update_group(&mut buffer, g, k, None, None, true)?;
                }
            }
            buffer.clear();
            EpisodeRecord {
                episode: k,
                phi,
                target,
                stats,
                losses,
            }
        };
        self.next_episode += 1;
        Ok(record)
    }

    /// Intra-group phase without capital mobility, then an inter-group phase that
    /// trains only the capital-tax head.
    pub fn two_phase_episode(&mut self, k: usize) -> Result<EpisodeRecord> {
        let phi = self.phi(k);
        let target = select_target_group(k, self.cfg.groups, self.cfg.sequential_update_enabled);
        let seed = episode_seed(self.cfg.seed, k);
        let world_cfg = self.cfg.world_config();
        let intra_sampled = not_mask(&INTER_DIMS, crate::world::GOV_ACTION_DIM);
        let inter_sampled = only_mask(&INTER_DIMS, crate::world::GOV_ACTION_DIM);
        let mut losses = vec![GroupLosses::default(); self.cfg.groups];

        let seed_a = seeding::derive_seed(seed, domain::EPISODE, 0);
        let (mut buf_a, _) = run_episode(&world_cfg, &self.agents, seed_a, seed_a, &self.episode_options(0.0, Some(intra_sampled.clone())))?;
        for (g, slot) in losses.iter_mut().enumerate() {
            if target.includes(g) {
                let frozen_a6 = self.agents.gov[g].params.head_mask(&INTER_DIMS).iter().map(|m| !m).collect();
                *slot = self.update_group(&mut buf_a, g, k, Some(intra_sampled.clone()), Some(frozen_a6), true)?;
            }
        }
        buf_a.clear();

        let seed_b = seeding::derive_seed(seed, domain::EPISODE, 1);
        let (mut buf_b, stats) = run_episode(&world_cfg, &self.agents, seed_b, seed_b, &self.episode_options(phi, Some(inter_sampled.clone())))?;
        for (g, slot) in losses.iter_mut().enumerate() {
            if target.includes(g) {
                let head = self.agents.gov[g].params.head_mask(&INTER_DIMS);
                let inter = self.update_group(&mut buf_b, g, k, Some(inter_sampled.clone()), Some(head), false)?;
                slot.gov = inter.gov;
            }
        }
        buf_b.clear();
        debug_assert!(INTRA_DIMS.iter().all(|d| intra_sampled[*d]));
        Ok(EpisodeRecord {
            episode: k,
            phi,
            target,
            stats,
            losses,
        })
    }

    /// Greedy rollouts on a fixed set of evaluation seeds at capital mobility `phi`.
    pub fn evaluate(&self, episodes: usize, phi: f64) -> Result<Vec<EpisodeStats>> {
        let opts = EpisodeOptions {
            phi,
            n_gov: self.cfg.n_gov,
            mode: ActionMode::Greedy,
            gov_sampled_dims: None,
            collect: false,
        };
        (0..episodes)
            .map(|i| {
                let s = seeding::derive_seed(self.cfg.seed, domain::EVAL_EPISODE, i as u64);
                run_episode(&self.cfg.world_config(), &self.agents, s, s, &opts).map(|r| r.1)
            })
            .collect()
    }

    /// Trains until `cfg.episodes` episodes are done, evaluating every
    /// `eval_interval` episodes. `on_episode` sees every record as it is produced.
    pub fn run(
        &mut self,
        mut on_episode: impl FnMut(&EpisodeRecord),
        mut on_eval: impl FnMut(&EvalRecord),
    ) -> Result<()> {
        while self.next_episode < self.cfg.episodes {
            let rec = self.train_episode()?;
            on_episode(&rec);
            let done = self.next_episode;
            if self.cfg.eval_interval > 0 && self.cfg.eval_episodes > 0 && done % self.cfg.eval_interval == 0 {
                let phi = self.phi(done);
                on_eval(&EvalRecord {
                    after_episode: done,
                    phi,
                    episodes: self.evaluate(self.cfg.eval_episodes, phi)?,
                });
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: MANIFEST_VERSION,
            next_episode: self.next_episode,
            phi: self.phi(self.next_episode),
            seed: self.cfg.seed,
            next_episode_seed: episode_seed(self.cfg.seed, self.next_episode),
            config: self.cfg.clone(),
        }
    }

    /// Writes `manifest.json` and per-group, per-role parameter and optimizer files.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        for (g, (gov, hh)) in self.agents.gov.iter().zip(&self.agents.households).enumerate() {
            let gdir = dir.join(format!("group{g}"));
            fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
            for (name, l) in [("government", gov), ("households", hh)] {
                save_params(&gdir.join(format!("{name}.bin")), &l.params)?;
                save_optimizer(&gdir.join(format!("{name}.opt")), l)?;
            }
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest())?).map_err(|e| Error::io(&path, e))
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", m.format_version)));
        }
        Ok(m)
    }

    /// Loads the agents stored in `dir`, checking that they fit `groups` groups.
    pub fn load_agents(dir: &Path, groups: usize) -> Result<Agents> {
        let mut agents = Agents {
            gov: Vec::new(),
            households: Vec::new(),
        };
        let mut g = 0;
        while dir.join(format!("group{g}")).is_dir() {
            let gdir = dir.join(format!("group{g}"));
            for (name, slot) in [("government", &mut agents.gov), ("households", &mut agents.households)] {
                let params = load_params(&gdir.join(format!("{name}.bin")))?;
                slot.push(load_optimizer(&gdir.join(format!("{name}.opt")), params)?);
            }
            g += 1;
        }
        if g != groups {
            return Err(Error::Shape(format!(
                "checkpoint holds {g} groups, the configuration asks for {groups}"
            )));
        }
        let want = crate::world::gov_obs_dim(groups);
        if agents.gov.iter().any(|l| l.params.obs_dim != want) {
            return Err(Error::Shape("government networks do not match the group count".into()));
        }
        Ok(agents)
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`]. Training then
    /// continues exactly as if it had never stopped.
    pub fn resume(dir: &Path) -> Result<Self> {
        let m = Self::read_manifest(dir)?;
        m.config.validate()?;
        let agents = Self::load_agents(dir, m.config.groups)?;
        Ok(Self {
            cfg: m.config,
            agents,
            next_episode: m.next_episode,
            dump_dir: None,
        })
    }
}
