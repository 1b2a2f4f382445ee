//! Flat `key=value` settings with layered precedence: built-in defaults,
//! then a config file or manifest, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use fferm::FermError;

/// Keys that describe where output goes rather than what is computed. They
/// are recorded in the manifest but excluded from the configuration hash.
const LOCATION_KEYS: [&str; 1] = ["out-dir"];

/// Keys written by the manifest that are not settings.
pub const MANIFEST_META: [&str; 6] = ["command", "version", "config-hash", "started", "finished", "outputs"];

pub const DEFAULTS: [(&str, &str); 17] = [
    ("div", "kl"),
    ("lambda", "0"),
    ("eta-theta", "1e-5"),
    ("eta-alpha", "1e-6"),
    ("epochs", "2000"),
    ("warmup", "300"),
    ("batch-size", "full"),
    ("seed", "0"),
    ("notion", "dp"),
    ("robust", "none"),
    ("delta", "0"),
    ("p-norm", "2"),
    ("arch", "linear"),
    ("reduction", "sum"),
    ("test-fraction", "0.2"),
    ("target-acc", "0.8"),
    ("out-dir", "."),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn with_defaults() -> Self {
        let mut s = Settings::default();
        for (k, v) in DEFAULTS {
            s.set(k, v);
        }
        s
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Layer a flat `key=value` file on top. Blank lines and `#` comments
    /// are skipped; manifest metadata keys are ignored.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), FermError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FermError::Config(format!("{}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                FermError::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            let k = k.trim().replace('_', "-");
            if MANIFEST_META.contains(&k.as_str()) {
                continue;
            }
            self.set(&k, v.trim());
        }
        Ok(())
    }

    pub fn require(&self, key: &str) -> Result<&str, FermError> {
        self.get(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| FermError::Config(format!("missing required setting --{key}")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, FermError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| FermError::Config(format!("invalid value {raw:?} for --{key}: {e}")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, FermError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, FermError>
    where
        T::Err: std::fmt::Display,
    {
        self.list(key)
            .into_iter()
            .map(|raw| {
                raw.parse()
                    .map_err(|e| FermError::Config(format!("invalid value {raw:?} for --{key}: {e}")))
            })
            .collect()
    }

    /// Settings as `key=value` lines in key order.
    pub fn render(&self, include_location: bool) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            if include_location || !LOCATION_KEYS.contains(&k.as_str()) {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    /// SHA-256 of the command and the computation-relevant settings.
    pub fn config_hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(format!("command={command}\n"));
        h.update(self.render(false));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
