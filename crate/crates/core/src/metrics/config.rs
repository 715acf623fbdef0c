//! TOML loading of run and experiment configurations.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::orchestrator::TrainConfig;

fn line_of(text: &str, err: &toml::de::Error) -> usize {
    err.span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0)
}

pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        Error::Config(format!(
            "{origin}:{}: {}",
            line_of(text, &e),
            e.message()
        ))
    })
}

/// Parses a run configuration. Missing keys take defaults, unknown keys are rejected.
pub fn parse_config(text: &str, origin: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = parse_toml(text, origin)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Algorithm;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("", "x").unwrap(), TrainConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let c = parse_config("groups = 3\nalgorithm = \"a2c\"\nn_gov = 1\n", "x").unwrap();
        assert_eq!(c.groups, 3);
        assert_eq!(c.algorithm, Algorithm::A2c);
        assert_eq!(c.n_gov, 1);
    }

    #[test]
    fn out_of_range_gamma_is_rejected() {
        assert!(matches!(parse_config("gamma = 2.0", "x"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse_config("groups = 2\n\nbogus_key = 1\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("cfg.toml:3"), "{msg}");
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn wrong_type_is_rejected() {
        assert!(parse_config("households = \"many\"", "x").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        let mut cfg = TrainConfig::default();
        cfg.seed = 42;
        cfg.actor_lr = Some(1e-4);
        std::fs::write(&p, toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(load_config(&p).unwrap(), cfg);
    }
}
