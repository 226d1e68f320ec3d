//! Config files, flag overrides and the resolved experiment config.
//!
//! Precedence is flag > file > built-in default. The file's `params` object
//! is merged key by key over the defaults, so it only needs the fields it
//! changes.

use crate::error::CliError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CONFIG_SCHEMA: &str = "kernel-mfg/config-v1";

/// Desk-scale overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub trials: Option<usize>,
    pub dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub params: Option<Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let file: ConfigFile =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let Some(s) = &file.schema {
            if s != CONFIG_SCHEMA {
                return Err(CliError::config(format!("unsupported config schema {s:?} (expected {CONFIG_SCHEMA:?})")));
            }
        }
        Ok(file)
    }

    /// A top-level field of `params`, if present.
    pub fn param(&self, key: &str) -> Option<&Value> {
        self.params.as_ref().and_then(|p| p.get(key))
    }
}

/// The fully resolved config; written next to the results and accepted back via `--config`.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved<P> {
    pub schema: &'static str,
    pub experiment: &'static str,
    pub seeds: Vec<u64>,
    pub params: P,
}

impl<P: Serialize> Resolved<P> {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// Recursively overlays `patch` on `base`. Objects tagged by different `kind`s are replaced whole.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let retag = matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Deserializes `defaults` with the file's `params` merged over it.
pub fn resolve_params<P: Serialize + DeserializeOwned>(defaults: P, file: &ConfigFile) -> Result<P, CliError> {
    let Some(patch) = file.params.clone() else {
        return Ok(defaults);
    };
    if !patch.is_object() {
        return Err(CliError::config("`params` must be an object"));
    }
    let mut v = serde_json::to_value(&defaults).map_err(CliError::io)?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| CliError::config(format!("params: {e}")))
}
