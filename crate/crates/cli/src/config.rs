//! JSON run configs: defaults, then a config file, then dotted-key
//! overrides, with unknown keys reported together.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Parses `key=value`; the value is read as JSON and falls back to a plain
/// string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    if k.is_empty() {
        return Err(format!("empty key in '{s}'"));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return;
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Keys of `v` absent from `reference`, as dotted paths. Values whose
/// default is not an object are not descended into.
fn unknown_keys(v: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(vo), Value::Object(ro)) = (v, reference) else {
        return;
    };
    for (k, sub) in vo {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match ro.get(k) {
            Some(r) => unknown_keys(sub, r, &path, out),
            None => out.push(path),
        }
    }
}

pub fn resolve<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<T, CliError> {
    let defaults = serde_json::to_value(T::default()).expect("config serializes");
    let mut v = defaults.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(CliError::usage(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut v, parsed);
    }
    for (k, value) in overrides {
        set_dotted(&mut v, k, value.clone());
    }
    let mut unknown = Vec::new();
    unknown_keys(&v, &defaults, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::usage(format!("unknown config keys: {}", unknown.join(", "))));
    }
    serde_json::from_value(v).map_err(|e| CliError::usage(format!("invalid config: {e}")))
}
