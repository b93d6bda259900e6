use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parse flat `key = value` text: one pair per line, `#` comments and blank
/// lines ignored. Duplicate keys are an error.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
        }
    }
    Ok(map)
}

/// Render pairs as sorted `key = value` lines.
pub fn render(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Typed lookup: Ok(None) when absent, Config error when unparsable.
pub fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("key {key}: cannot parse value {raw:?}"))),
    }
}

/// Typed lookup that insists the key is present.
pub fn require<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    get(map, key)?.ok_or_else(|| Error::Config(format!("missing required key {key}")))
}
