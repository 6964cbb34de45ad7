//! Command configs: defaults overlaid with a user JSON file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Recursively overlays `patch` onto `base`. Objects merge key by key; any
/// other value replaces what was there.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
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

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
}

/// Every key path present in `patch` must exist in `base`, so a typo in a
/// config file is an error rather than a silently ignored setting.
fn check_keys(base: &Value, patch: &Value, prefix: &str) -> Result<(), ConfigError> {
    if let (Value::Object(b), Value::Object(p)) = (base, patch) {
        for (k, v) in p {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match b.get(k) {
                None => return Err(ConfigError::UnknownKey(path)),
                Some(inner) => check_keys(inner, v, &path)?,
            }
        }
    }
    Ok(())
}

/// `defaults` overlaid with the JSON object in `path`, if any.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T, ConfigError> {
    let mut base = serde_json::to_value(defaults)?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
            path: p.display().to_string(),
            source,
        })?;
        let patch: Value = serde_json::from_str(&text)?;
        check_keys(&base, &patch, "")?;
        merge(&mut base, patch);
    }
    Ok(serde_json::from_value(base)?)
}
