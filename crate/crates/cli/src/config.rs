//! Flat key-value experiment configs and their canonical hash.
//!
//! A config file is declarative text: `key = value` lines grouped under
//! `[section]` headers, with `#` starting a comment. A key's full name
//! is `section.key`. Values are scalars or comma-separated lists.
//!
//! ```text
//! # newsvendor training run
//! [experiment]
//! application = newsvendor
//! model = causal-sdro
//! seed = 7
//!
//! [sinkhorn]
//! lambda = 1.0
//! eps = 0.1
//! ```
//!
//! Typos are hard errors: after a command has read the keys it
//! understands, [`Config::finish`] rejects any leftover key. Every read
//! records the *resolved* value (explicit or default) in a canonical
//! form; [`Config::hash`] is the SHA-256 of those sorted `key=value`
//! lines. The hash therefore identifies the semantic experiment — two
//! files that spell the same resolved settings differently (extra
//! whitespace, `0.10` vs `0.1`, omitted defaults) hash identically,
//! while output paths and worker counts never enter it.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Errors raised while parsing or resolving a config file.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate config key `{0}`")]
    Duplicate(String),
    #[error("missing required config key `{0}`")]
    Missing(String),
    #[error("config key `{key}`: cannot parse `{value}` as {want}")]
    BadValue {
        key: String,
        value: String,
        want: &'static str,
    },
    #[error("config key `{key}`: {msg}")]
    BadSetting { key: String, msg: String },
    #[error("unknown config key(s): {0} — remove them or fix the spelling")]
    Unknown(String),
}

impl From<ConfigError> for crate::CliError {
    fn from(e: ConfigError) -> Self {
        crate::CliError::Validation(e.into())
    }
}

/// A parsed config file plus the record of how each key was resolved.
#[derive(Debug)]
pub struct Config {
    raw: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
    consumed: RefCell<BTreeSet<String>>,
    /// `--seed` flag value; overrides `experiment.seed`/`experiment.seeds`.
    seed_override: Option<u64>,
}

impl Config {
    /// Parses config text. Section headers `[name]` prefix subsequent
    /// keys as `name.key`; `#` comments and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: line_no,
                    msg: format!("section header `{line}` is missing the closing `]`"),
                })?;
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        msg: format!("invalid section name `{name}`"),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if map.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate(full));
            }
        }
        Ok(Config {
            raw: map,
            resolved: RefCell::new(BTreeMap::new()),
            consumed: RefCell::new(BTreeSet::new()),
            seed_override: None,
        })
    }

    /// Reads and parses a config file from disk.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Installs the `--seed` flag value. It takes precedence over
    /// `experiment.seed` and collapses `experiment.seeds` to one seed.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        self.seed_override = seed;
    }

    fn mark(&self, key: &str, canonical: String) {
        self.consumed.borrow_mut().insert(key.to_string());
        self.resolved.borrow_mut().insert(key.to_string(), canonical);
    }

    fn raw_get(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(|s| s.as_str())
    }

    /// String value with a default.
    pub fn get_str(&self, key: &str, default: &str) -> String {
        let v = self.raw_get(key).unwrap_or(default).to_string();
        self.mark(key, v.clone());
        v
    }

    /// Required string value.
    pub fn require_str(&self, key: &str) -> Result<String, ConfigError> {
        match self.raw_get(key) {
            Some(v) => {
                let v = v.to_string();
                self.mark(key, v.clone());
                Ok(v)
            }
            None => Err(ConfigError::Missing(key.to_string())),
        }
    }

    /// Optional string value: present keys are consumed and hashed,
    /// absent keys leave no trace.
    pub fn opt_str(&self, key: &str) -> Option<String> {
        let v = self.raw_get(key)?.to_string();
        self.mark(key, v.clone());
        Some(v)
    }

    fn parse_scalar<T: std::str::FromStr>(
        &self,
        key: &str,
        value: &str,
        want: &'static str,
    ) -> Result<T, ConfigError> {
        value.parse::<T>().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            want,
        })
    }

    /// f64 with a default; canonicalized via Rust's shortest-roundtrip
    /// float formatting so `0.10` and `0.1` hash identically.
    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = match self.raw_get(key) {
            Some(s) => self.parse_scalar::<f64>(key, s, "a number")?,
            None => default,
        };
        if !v.is_finite() {
            return Err(ConfigError::BadSetting {
                key: key.to_string(),
                msg: format!("must be finite, got {v}"),
            });
        }
        self.mark(key, format!("{v}"));
        Ok(v)
    }

    /// u64 with a default.
    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        let v = match self.raw_get(key) {
            Some(s) => self.parse_scalar::<u64>(key, s, "a non-negative integer")?,
            None => default,
        };
        self.mark(key, format!("{v}"));
        Ok(v)
    }

    /// Optional usize: `None` when the key is absent (the caller's
    /// structural default applies and the key leaves no hash trace).
    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.raw_get(key) {
            Some(s) => {
                let v = self.parse_scalar::<usize>(key, s, "a non-negative integer")?;
                self.mark(key, format!("{v}"));
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// usize with a default.
    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = match self.raw_get(key) {
            Some(s) => self.parse_scalar::<usize>(key, s, "a non-negative integer")?,
            None => default,
        };
        self.mark(key, format!("{v}"));
        Ok(v)
    }

    /// Boolean with a default; accepts `true`/`false`.
    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        let v = match self.raw_get(key) {
            Some(s) => self.parse_scalar::<bool>(key, s, "true or false")?,
            None => default,
        };
        self.mark(key, format!("{v}"));
        Ok(v)
    }

    /// Comma-separated f64 list with a default.
    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        let vals = match self.raw_get(key) {
            Some(s) => split_list(s)
                .map(|item| self.parse_scalar::<f64>(key, item, "a number list"))
                .collect::<Result<Vec<f64>, _>>()?,
            None => default.to_vec(),
        };
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::BadSetting {
                key: key.to_string(),
                msg: "list entries must be finite".into(),
            });
        }
        self.mark(key, join_f64(&vals));
        Ok(vals)
    }

    /// Comma-separated usize list with a default.
    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        let vals = match self.raw_get(key) {
            Some(s) => split_list(s)
                .map(|item| self.parse_scalar::<usize>(key, item, "an integer list"))
                .collect::<Result<Vec<usize>, _>>()?,
            None => default.to_vec(),
        };
        let canon: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        self.mark(key, canon.join(","));
        Ok(vals)
    }

    /// Comma-separated string list with a default.
    pub fn get_str_list(&self, key: &str, default: &[&str]) -> Vec<String> {
        let vals: Vec<String> = match self.raw_get(key) {
            Some(s) => split_list(s).map(|v| v.to_string()).collect(),
            None => default.iter().map(|v| v.to_string()).collect(),
        };
        self.mark(key, vals.join(","));
        vals
    }

    /// Required comma-separated string list.
    pub fn require_str_list(&self, key: &str) -> Result<Vec<String>, ConfigError> {
        let raw = self.require_str(key)?;
        Ok(split_list(&raw).map(|v| v.to_string()).collect())
    }

    /// The run seed: the `--seed` flag when given, else
    /// `experiment.seed`, else the default 0.
    pub fn seed(&self) -> Result<u64, ConfigError> {
        match self.seed_override {
            Some(s) => {
                self.consumed.borrow_mut().insert("experiment.seed".into());
                self.mark("experiment.seed", format!("{s}"));
                Ok(s)
            }
            None => self.get_u64("experiment.seed", 0),
        }
    }

    /// The seed list for sweep commands: the `--seed` flag (as a
    /// one-element list) when given, else `experiment.seeds`, else `[0]`.
    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        if let Some(s) = self.seed_override {
            self.consumed.borrow_mut().insert("experiment.seeds".into());
            self.mark("experiment.seeds", format!("{s}"));
            return Ok(vec![s]);
        }
        let vals = match self.raw_get("experiment.seeds") {
            Some(s) => split_list(s)
                .map(|item| self.parse_scalar::<u64>("experiment.seeds", item, "a seed list"))
                .collect::<Result<Vec<u64>, _>>()?,
            None => vec![0],
        };
        if vals.is_empty() {
            return Err(ConfigError::BadSetting {
                key: "experiment.seeds".into(),
                msg: "seed list must be non-empty".into(),
            });
        }
        let canon: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        self.mark("experiment.seeds", canon.join(","));
        Ok(vals)
    }

    /// Rejects any key the command did not consume. Call after all
    /// settings have been read so typos cannot silently fall back to
    /// defaults.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self.raw.keys().filter(|k| !consumed.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list = unknown
                .iter()
                .map(|k| format!("`{k}`"))
                .collect::<Vec<_>>()
                .join(", ");
            Err(ConfigError::Unknown(list))
        }
    }

    /// SHA-256 over the sorted resolved `key=value` lines, as lowercase
    /// hex. Output directory and worker count never enter the resolved
    /// map, so they cannot perturb the hash; the seed always does.
    pub fn hash(&self) -> String {
        let resolved = self.resolved.borrow();
        let mut text = String::new();
        for (k, v) in resolved.iter() {
            writeln!(text, "{k}={v}").unwrap();
        }
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }

    /// The resolved `key=value` lines (sorted), for provenance sidecars.
    pub fn resolved_lines(&self) -> Vec<String> {
        self.resolved
            .borrow()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect()
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(|v| v.trim()).filter(|v| !v.is_empty())
}

fn join_f64(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_values() {
        let cfg = Config::parse(
            "# header comment\n\
             [experiment]\n\
             application = newsvendor  # trailing comment\n\
             seed=7\n\
             \n\
             [sinkhorn]\n\
             lambda = 1.5\n",
        )
        .expect("config should parse");
        assert_eq!(
            cfg.get_str("experiment.application", "inventory"),
            "newsvendor"
        );
        assert_eq!(cfg.seed().unwrap(), 7);
        assert_eq!(cfg.get_f64("sinkhorn.lambda", 1.0).unwrap(), 1.5);
        cfg.finish().expect("all keys consumed");
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let cfg = Config::parse("[experiment]\nsed = 3\n").unwrap();
        let _ = cfg.seed();
        let err = cfg.finish().expect_err("typo `sed` must be rejected");
        assert!(
            err.to_string().contains("experiment.sed"),
            "error should name the unknown key, got: {err}"
        );
    }

    #[test]
    fn duplicate_key_rejected_at_parse_time() {
        let err = Config::parse("[a]\nx = 1\nx = 2\n").expect_err("duplicate must fail");
        assert!(err.to_string().contains("a.x"), "got: {err}");
    }

    #[test]
    fn hash_ignores_spelling_but_not_values() {
        let a = Config::parse("[sinkhorn]\neps = 0.10\n").unwrap();
        let b = Config::parse("[sinkhorn]\neps=0.1\n").unwrap();
        let c = Config::parse("[sinkhorn]\neps = 0.2\n").unwrap();
        for cfg in [&a, &b, &c] {
            cfg.get_f64("sinkhorn.eps", 0.1).unwrap();
        }
        assert_eq!(a.hash(), b.hash(), "0.10 and 0.1 must hash identically");
        assert_ne!(a.hash(), c.hash(), "different eps must change the hash");
    }

    #[test]
    fn hash_covers_defaults_so_omitted_equals_explicit() {
        let explicit = Config::parse("[sinkhorn]\neps = 0.1\n").unwrap();
        let omitted = Config::parse("").unwrap();
        explicit.get_f64("sinkhorn.eps", 0.1).unwrap();
        omitted.get_f64("sinkhorn.eps", 0.1).unwrap();
        assert_eq!(explicit.hash(), omitted.hash());
    }

    #[test]
    fn seed_flag_overrides_file_seed_and_seed_list() {
        let mut cfg = Config::parse("[experiment]\nseed = 3\nseeds = 1,2,3\n").unwrap();
        cfg.override_seed(Some(11));
        assert_eq!(cfg.seed().unwrap(), 11);
        assert_eq!(cfg.seeds().unwrap(), vec![11]);
        cfg.finish().expect("override consumes the file keys");
    }

    #[test]
    fn seed_changes_the_hash() {
        let mut a = Config::parse("").unwrap();
        let mut b = Config::parse("").unwrap();
        a.override_seed(Some(1));
        b.override_seed(Some(2));
        a.seed().unwrap();
        b.seed().unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn list_values_parse_and_canonicalize() {
        let cfg = Config::parse("[sweep]\nlambda = 0.50, 1.0,2\n").unwrap();
        let vals = cfg.get_f64_list("sweep.lambda", &[1.0]).unwrap();
        assert_eq!(vals, vec![0.5, 1.0, 2.0]);
        let other = Config::parse("[sweep]\nlambda = 0.5,1,2.00\n").unwrap();
        other.get_f64_list("sweep.lambda", &[1.0]).unwrap();
        assert_eq!(cfg.hash(), other.hash());
    }

    #[test]
    fn missing_required_key_names_it() {
        let cfg = Config::parse("").unwrap();
        let err = cfg.require_str("data.path").expect_err("must be missing");
        assert!(err.to_string().contains("data.path"), "got: {err}");
    }
}
