//! Flat `section.key = value` configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! mcmc.iterations = 10000
//! scenario.censor = 0.28
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "mcmc.iterations",
    "mcmc.burn_in",
    "mcmc.thin",
    "mcmc.seed",
    "mcmc.chains",
    "scenario.n",
    "scenario.p",
    "scenario.q1",
    "scenario.q2",
    "scenario.sigma_t2",
    "scenario.sigma2_u",
    "scenario.censor",
    "scenario.generator",
    "scenario.seed",
    "prior.kind",
    "prior.sigma2_u",
    "prior.baseline_variance",
    "study.preset",
    "study.replicates",
    "study.seed",
    "curves.grid_points",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", k + 1);
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("line {}: unknown key {key:?}", k + 1);
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(_) => bail!("config key {key}: cannot parse {raw:?}"),
            },
        }
    }

    /// Flag value if given, else the config entry, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let c = Config::parse("# x\nmcmc.iterations = 500\n\nmcmc.thin=5\n").unwrap();
        assert_eq!(c.resolve(Some(7usize), "mcmc.iterations", 1).unwrap(), 7);
        assert_eq!(c.resolve(None, "mcmc.iterations", 1usize).unwrap(), 500);
        assert_eq!(c.resolve(None, "mcmc.burn_in", 3usize).unwrap(), 3);
        assert_eq!(c.resolve(None, "mcmc.thin", 1usize).unwrap(), 5);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::parse("mcmc.iters = 3").is_err());
        assert!(Config::parse("mcmc.iterations").is_err());
        let c = Config::parse("mcmc.iterations = many").unwrap();
        assert!(c.resolve::<usize>(None, "mcmc.iterations", 1).is_err());
    }
}
