use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "CLAIMFORGE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid value for {key}: {value}")]
    BadEnv { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Must be set to bind anything other than a loopback address.
    pub allow_remote: bool,
    pub vocabulary: Option<PathBuf>,
    pub forward_checkpoint: Option<PathBuf>,
    pub backward_checkpoint: Option<PathBuf>,
    pub relevancy_checkpoint: Option<PathBuf>,
    /// Session and annotation journal; in-memory only when unset.
    pub store_path: Option<PathBuf>,
    pub session_ttl_secs: u64,
    /// Weight of the relevancy score in candidate ranking.
    pub lambda: f64,
    pub oversample: usize,
    /// Journal appends between compactions.
    pub compact_every: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8787)),
            allow_remote: false,
            vocabulary: None,
            forward_checkpoint: None,
            backward_checkpoint: None,
            relevancy_checkpoint: None,
            store_path: None,
            session_ttl_secs: 24 * 60 * 60,
            lambda: 1.0,
            oversample: 4,
            compact_every: 1000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadEnv { key: key.to_string(), value: value.to_string() })
}

impl ServiceConfig {
    /// Defaults, overlaid by the TOML file (if any), overlaid by the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `CLAIMFORGE_<FIELD>` overrides; other variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (key, value) in vars {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else { continue };
            let path = || Some(PathBuf::from(&value));
            match field {
                "BIND" => self.bind = parse(&key, &value)?,
                "ALLOW_REMOTE" => self.allow_remote = parse(&key, &value)?,
                "VOCABULARY" => self.vocabulary = path(),
                "FORWARD_CHECKPOINT" => self.forward_checkpoint = path(),
                "BACKWARD_CHECKPOINT" => self.backward_checkpoint = path(),
                "RELEVANCY_CHECKPOINT" => self.relevancy_checkpoint = path(),
                "STORE_PATH" => self.store_path = path(),
                "SESSION_TTL_SECS" => self.session_ttl_secs = parse(&key, &value)?,
                "LAMBDA" => self.lambda = parse(&key, &value)?,
                "OVERSAMPLE" => self.oversample = parse(&key, &value)?,
                "COMPACT_EVERY" => self.compact_every = parse(&key, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.bind.ip().is_loopback() && !self.allow_remote {
            return Err(ConfigError::Invalid(format!("refusing to bind {} without allow_remote", self.bind)));
        }
        if !self.lambda.is_finite() || self.oversample == 0 || self.compact_every == 0 {
            return Err(ConfigError::Invalid("lambda must be finite; oversample and compact_every positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_bind_localhost() {
        let c = ServiceConfig::default();
        assert!(c.bind.ip().is_loopback());
        assert_eq!(c.session_ttl_secs, 86_400);
        c.validate().unwrap();
    }

    #[test]
    fn env_overrides_file() {
        let mut c: ServiceConfig = toml::from_str("lambda = 0.5\nsession_ttl_secs = 60\n").unwrap();
        c.apply_env([
            ("CLAIMFORGE_LAMBDA".to_string(), "2".to_string()),
            ("CLAIMFORGE_FORWARD_CHECKPOINT".to_string(), "/m/fwd.ckpt".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(c.lambda, 2.0);
        assert_eq!(c.session_ttl_secs, 60);
        assert_eq!(c.forward_checkpoint, Some(PathBuf::from("/m/fwd.ckpt")));
        assert!(c.apply_env([("CLAIMFORGE_OVERSAMPLE".to_string(), "many".to_string())]).is_err());
    }

    #[test]
    fn remote_bind_needs_opt_in() {
        let mut c = ServiceConfig { bind: "0.0.0.0:80".parse().unwrap(), ..Default::default() };
        assert!(c.validate().is_err());
        c.allow_remote = true;
        c.validate().unwrap();
        assert!(toml::from_str::<ServiceConfig>("colour = 1").is_err());
    }
}
