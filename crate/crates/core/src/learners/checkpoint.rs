//! Binary parameter files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   [u8; 4]   "FAPP" for parameters, "FAOP" for optimizer state
//! version u32
//! header  u64 * 5   obs_dim, action_dim, hidden, actor_len, critic_len
//! body    f64 * ..  parameters: actor, critic
//!                   optimizer:  step counts (as u64) then m/v for actor and critic
//! ```
//!
//! Parameter files get a JSON sidecar with the same name and a `.json` extension.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::policy::PolicyParams;
use super::update::Learner;
use crate::error::{Error, Result};

const PARAM_MAGIC: &[u8; 4] = b"FAPP";
const OPT_MAGIC: &[u8; 4] = b"FAOP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub format_version: u32,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: String,
    pub actor_len: usize,
    pub critic_len: usize,
}

impl Topology {
    pub fn of(p: &PolicyParams) -> Self {
        Self {
            format_version: VERSION,
            obs_dim: p.obs_dim,
            action_dim: p.action_dim,
            hidden: p.hidden,
            hidden_layers: 2,
            activation: "relu".into(),
            actor_len: p.actor.len(),
            critic_len: p.critic.len(),
        }
    }
}

fn header(magic: &[u8; 4], p: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 40 + 8 * (p.actor.len() + p.critic.len()));
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [p.obs_dim, p.action_dim, p.hidden, p.actor.len(), p.critic.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: 0,
                detail: format!("truncated file at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.bad("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn bad(&self, detail: &str) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            detail: detail.into(),
        }
    }

    /// Checks magic and version, returns the five header fields.
    fn header(&mut self, magic: &[u8; 4]) -> Result<[usize; 5]> {
        if self.take(4)? != magic {
            return Err(self.bad("bad magic bytes"));
        }
        let version = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(self.bad(&format!("unsupported format version {version}")));
        }
        let mut h = [0usize; 5];
        for slot in &mut h {
            *slot = usize::try_from(self.u64()?).map_err(|_| self.bad("header value too large"))?;
        }
        Ok(h)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad("trailing bytes"));
        }
        Ok(())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_params(path: &Path, p: &PolicyParams) -> Result<()> {
    let mut out = header(PARAM_MAGIC, p);
    put_f64s(&mut out, &p.actor);
    put_f64s(&mut out, &p.critic);
    write(path, &out)?;
    let meta = serde_json::to_string_pretty(&Topology::of(p))?;
    write(&sidecar_path(path), meta.as_bytes())
}

pub fn load_params(path: &Path) -> Result<PolicyParams> {
    let bytes = read(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let [obs_dim, action_dim, hidden, actor_len, critic_len] = r.header(PARAM_MAGIC)?;
    let actor = r.f64s(actor_len)?;
    let critic = r.f64s(critic_len)?;
    r.finish()?;
    let p = PolicyParams {
        obs_dim,
        action_dim,
        hidden,
        actor,
        critic,
    };
    let expect = PolicyParams::zeros(obs_dim, action_dim, hidden);
    if expect.actor.len() != actor_len || expect.critic.len() != critic_len {
        return Err(r.bad("parameter counts disagree with the stated topology"));
    }
    Ok(p)
}

pub fn save_optimizer(path: &Path, l: &Learner) -> Result<()> {
    let mut out = header(OPT_MAGIC, &l.params);
    out.extend_from_slice(&l.actor_opt.step.to_le_bytes());
    out.extend_from_slice(&l.critic_opt.step.to_le_bytes());
    for opt in [&l.actor_opt, &l.critic_opt] {
        put_f64s(&mut out, &opt.m);
        put_f64s(&mut out, &opt.v);
    }
    write(path, &out)
}

/// Restores optimizer moments saved for parameters with the same topology as `params`.
pub fn load_optimizer(path: &Path, params: PolicyParams) -> Result<Learner> {
    let bytes = read(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let h = r.header(OPT_MAGIC)?;
    if h != [params.obs_dim, params.action_dim, params.hidden, params.actor.len(), params.critic.len()] {
        return Err(Error::Shape(format!(
            "{}: optimizer state does not match the parameter topology",
            path.display()
        )));
    }
    let mut learner = Learner::new(params);
    learner.actor_opt.step = r.u64()?;
    learner.critic_opt.step = r.u64()?;
    let (na, nc) = (h[3], h[4]);
    let fill = |opt: &mut Adam, r: &mut Reader, n| -> Result<()> {
        opt.m = r.f64s(n)?;
        opt.v = r.f64s(n)?;
        Ok(())
    };
    fill(&mut learner.actor_opt, &mut r, na)?;
    fill(&mut learner.critic_opt, &mut r, nc)?;
    r.finish()?;
    Ok(learner)
}

#[cfg(test)]
mod tests {
    use super::super::policy::InitConfig;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gov0.bin");
        let p = PolicyParams::new(19, 6, 16, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        save_params(&path, &p).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
        let meta: Topology = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta, Topology::of(&p));
    }

    #[test]
    fn optimizer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opt.bin");
        let p = PolicyParams::new(4, 2, 8, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        let mut l = Learner::new(p.clone());
        let g = vec![0.3; p.actor.len()];
        l.actor_opt.step(&mut l.params.actor, &g, 0.1, None);
        save_optimizer(&path, &l).unwrap();
        assert_eq!(load_optimizer(&path, l.params.clone()).unwrap(), l);
        assert!(matches!(
            load_optimizer(&path, PolicyParams::zeros(5, 2, 8)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&path, &PolicyParams::zeros(3, 2, 4)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Parse { .. })));
        fs::write(&path, b"NOPE").unwrap();
        assert!(load_params(&path).is_err());
        assert!(matches!(load_params(&dir.path().join("missing.bin")), Err(Error::Io { .. })));
    }
}
