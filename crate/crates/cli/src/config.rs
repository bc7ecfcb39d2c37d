//! Plain-text `key = value` config files, flag merging and run manifests.
//!
//! Flags win over config values. Every run writes a manifest listing the
//! resolved configuration, the seed and the SHA-256 of each output file, so
//! results are re-derivable; nothing time-dependent goes in.

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// Marker type for problems the user can fix on the command line; mapped to
/// exit code 1 (data and format problems exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: String) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg))
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path, valid_keys: &[&str]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {}", path.display(), e)))?;
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(usage(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    n + 1
                )));
            };
            let key = k.trim().to_string();
            if !valid_keys.contains(&key.as_str()) {
                return Err(usage(format!(
                    "{}:{}: unknown key {:?}; valid keys: {}",
                    path.display(),
                    n + 1,
                    key,
                    valid_keys.join(", ")
                )));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// Flag value if given, else config value, else default.
    pub fn resolve<T: std::str::FromStr + Clone>(
        &self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| usage(format!("config key {:?}: {}", key, e))),
            None => Ok(default),
        }
    }

    pub fn resolve_flag(&self, key: &str, flag: bool) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse::<bool>()
                .map_err(|e| usage(format!("config key {:?}: {}", key, e))),
            None => Ok(false),
        }
    }
}

/// Collects resolved settings and output files, then renders the manifest.
#[derive(Debug, Default)]
pub struct Manifest {
    settings: BTreeMap<String, String>,
    outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let bytes =
            fs::read(path).with_context(|| format!("hashing output {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.push((name, hex(&digest)));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for (k, v) in &self.settings {
            body.push_str(&format!("{} = {}\n", k, v));
        }
        let mut outputs = self.outputs.clone();
        outputs.sort();
        for (name, digest) in outputs {
            body.push_str(&format!("sha256 {} = {}\n", name, digest));
        }
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Key=value metadata sidecar describing a trained model.
pub fn write_meta(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut body = String::new();
    for (k, v) in entries {
        body.push_str(&format!("{} = {}\n", k, v));
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

pub fn meta_get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| anyhow::anyhow!("model metadata is missing key {:?}", key))
}
