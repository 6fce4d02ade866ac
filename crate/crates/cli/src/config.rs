//! JSON training configs with dotted-path overrides.

use std::path::Path;

use misfit_core::trainer::TrainingConfig;
use serde_json::{Map, Value};

use crate::CliError;

pub const SEED_ENV: &str = "MISFIT_SEED";

/// Paths in `user` that do not exist in `schema`. A `null` in the schema
/// (an unset optional) accepts any value below it.
fn unknown_keys(schema: &Value, user: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(s), Value::Object(u)) = (schema, user) else {
        return;
    };
    for (k, v) in u {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            None => out.push(path),
            Some(sv) => unknown_keys(sv, v, &path, out),
        }
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `k=v`; the value is read as JSON and falls back to a plain string.
fn parse_override(text: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{text}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("override `{text}` has an empty path segment")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((path, value))
}

/// The node at `path`, created if missing, or `None` when the path is not
/// part of the schema.
fn slot<'a>(node: &'a mut Value, schema: &Value, path: &[String]) -> Option<&'a mut Value> {
    let Some((seg, rest)) = path.split_first() else {
        return Some(node);
    };
    let s = schema.get(seg)?;
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    let child = node.as_object_mut()?.entry(seg.clone()).or_insert(Value::Null);
    slot(child, s, rest)
}

/// Config tree with every key of [`TrainingConfig`] at its default.
pub fn schema() -> Value {
    serde_json::to_value(TrainingConfig::default()).expect("config serialises")
}

/// Flattened `path = default` lines for help output.
pub fn schema_lines() -> Vec<String> {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, v) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(v, &p, out);
                }
            }
            other => out.push(format!("{prefix} = {other}")),
        }
    }
    let mut out = Vec::new();
    walk(&schema(), "", &mut out);
    out
}

/// Reads a config file, applies overrides, falls back to `MISFIT_SEED` when
/// neither sets the seed, and validates the result.
pub fn load(path: &Path, overrides: &[String]) -> Result<TrainingConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let user: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !user.is_object() {
        return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
    }
    from_value(user, overrides)
}

pub fn from_value(user: Value, overrides: &[String]) -> Result<TrainingConfig, CliError> {
    let schema = schema();
    let mut bad = Vec::new();
    unknown_keys(&schema, &user, "", &mut bad);
    let mut seed_given = user.get("seed").is_some();

    let mut tree = schema.clone();
    merge(&mut tree, user);
    for o in overrides {
        let (path, value) = parse_override(o)?;
        match slot(&mut tree, &schema, &path) {
            Some(node) => *node = value,
            None => bad.push(path.join(".")),
        }
        seed_given |= path == ["seed"];
    }
    if !bad.is_empty() {
        return Err(CliError::Schema(bad));
    }
    if !seed_given {
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
            tree["seed"] = Value::from(seed);
        }
    }
    let config: TrainingConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
        let at = e.path().to_string();
        CliError::Schema(vec![format!("{at}: {}", e.into_inner())])
    })?;
    config.validate()?;
    Ok(config)
}

/// Pretty JSON of a config, as written next to training outputs.
pub fn to_json(config: &TrainingConfig) -> String {
    let mut v = serde_json::to_value(config).expect("config serialises");
    if let Value::Object(m) = &mut v {
        m.retain(|_, x| !x.is_null());
    }
    serde_json::to_string_pretty(&v).expect("value serialises")
}
