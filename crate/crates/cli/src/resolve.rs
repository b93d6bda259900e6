//! Flag / config-file / environment resolution. Precedence everywhere:
//! command-line flag, then `--config` file entry, then (for the seed only)
//! the LCS_MNMT_SEED environment variable, then the built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use lcs_core::kvconfig;
use lcs_core::strategy::{StrategyName, TagSide};
use lcs_core::{Error, Result};

pub struct Resolver {
    map: BTreeMap<String, String>,
}

impl Resolver {
    pub fn load(config: Option<&Path>) -> Result<Resolver> {
        let map = match config {
            Some(p) => kvconfig::parse(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver { map })
    }

    /// CLI value wins over the config file; absent in both gives None.
    pub fn opt<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        kvconfig::get(&self.map, key)
    }

    pub fn get_or<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(cli, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<T> {
        self.opt(cli, key)?.ok_or_else(|| {
            Error::Config(format!(
                "missing required --{} (also settable as `{key} = …` in --config)",
                key.replace('_', "-")
            ))
        })
    }

    /// Seed gets one extra fallback layer: the LCS_MNMT_SEED variable.
    pub fn seed(&self, cli: Option<u64>) -> Result<u64> {
        if let Some(s) = self.opt(cli, "seed")? {
            return Ok(s);
        }
        match std::env::var("LCS_MNMT_SEED") {
            Ok(v) => v.trim().parse().map_err(|_| {
                Error::Config(format!("LCS_MNMT_SEED must be an unsigned integer, got `{v}`"))
            }),
            Err(_) => Ok(1),
        }
    }
}

pub fn parse_tag(value: &str) -> Result<Option<TagSide>> {
    match value.to_ascii_lowercase().as_str() {
        "src" | "source" => Ok(Some(TagSide::Source)),
        "tgt" | "target" => Ok(Some(TagSide::Target)),
        "none" | "off" => Ok(None),
        _ => Err(Error::Config(format!(
            "tag side must be src, tgt, or none; got `{value}`"
        ))),
    }
}

pub fn parse_direction(s: &str) -> Result<(String, String)> {
    let parts: Vec<&str> = s.split('-').collect();
    if parts.len() != 2 || parts[0].is_empty() || parts[1].is_empty() {
        return Err(Error::Config(format!(
            "direction must look like src-tgt (e.g. aa-bb), got `{s}`"
        )));
    }
    Ok((parts[0].to_string(), parts[1].to_string()))
}

/// Comma-separated list with trimming; empty items rejected.
pub fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                return Err(Error::Config(format!("empty entry in {what} list `{s}`")));
            }
            item.parse()
                .map_err(|_| Error::Config(format!("cannot parse `{item}` in {what} list")))
        })
        .collect()
}

pub fn parse_strategies(s: &str) -> Result<Vec<StrategyName>> {
    s.split(',')
        .map(|item| StrategyName::parse(item.trim()))
        .collect()
}
