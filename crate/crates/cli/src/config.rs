//! Command configuration: a TOML file (or an earlier run's manifest) with
//! command-line overrides layered on top.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Loads the base config value. `.json` files are taken to be run manifests
/// and must have been written by the same command.
pub fn load_file(path: &Path, command: &str) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let recorded = v.get("command").and_then(Value::as_str).unwrap_or_default();
        if recorded != command {
            return Err(CliError::Usage(format!(
                "{} records command {recorded:?}, not {command:?}",
                path.display()
            )));
        }
        return v
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{} has no config section", path.display())));
    }
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))
}

/// Parses the value half of `--set key=value` as a TOML literal, falling back
/// to a bare string.
pub fn parse_literal(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
    if k.is_empty() {
        return Err(CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")));
    }
    Ok((k.to_string(), parse_literal(v)))
}

/// Sets a dotted path, creating intermediate tables.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Map::new());
            } else {
                return Err(CliError::Usage(format!("{key}: {} is not a table", parts[..i].join("."))));
            }
        }
        let obj = cur.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

fn leaf_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(child, &p, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |cur, k| cur.get(k))
}

/// Merges `overrides` into `base`, deserializes, and rejects keys that the
/// config type does not know. Returns the config and its full serialized form
/// (every default included).
pub fn resolve<T: Serialize + DeserializeOwned>(mut base: Value, overrides: Vec<(String, Value)>) -> Result<(T, Value), CliError> {
    if base.is_null() {
        base = Value::Object(Map::new());
    }
    for (k, v) in overrides {
        set_path(&mut base, &k, v)?;
    }
    let cfg: T = serde_json::from_value(base.clone()).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    let full = serde_json::to_value(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut given = Vec::new();
    leaf_paths(&base, "", &mut given);
    for p in given {
        if !p.is_empty() && lookup(&full, &p).is_none() {
            return Err(CliError::Usage(format!("unknown config key {p:?}")));
        }
    }
    Ok((cfg, full))
}

/// Every `seed` entry in a config value, by dotted path.
pub fn seeds(v: &Value) -> Map<String, Value> {
    let mut out = Map::new();
    let mut paths = Vec::new();
    leaf_paths(v, "", &mut paths);
    for p in paths {
        if p == "seed" || p.ends_with(".seed") {
            if let Some(s) = lookup(v, &p) {
                out.insert(p, s.clone());
            }
        }
    }
    out
}
