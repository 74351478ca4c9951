//! Flat `key = value` text format used for parameter files, run
//! configurations and manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat only
//! once; the parser keeps line numbers so that consumers can report where a
//! bad value came from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line_no}: expected `key = value`, found `{line}`"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {line_no}: invalid key `{key}`")));
            }
            if entries
                .insert(key.to_string(), (value.to_string(), line_no))
                .is_some()
            {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}`")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key`; absent keys yield `Ok(None)`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((raw, line)) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("line {line}: cannot parse value `{raw}` for key `{key}`"))
            }),
        }
    }

    /// Removes every key starting with `prefix`, returning them with the
    /// prefix stripped.
    pub fn take_prefixed(&mut self, prefix: &str) -> KeyValues {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        let mut out = KeyValues::new();
        for k in keys {
            let v = self.entries.remove(&k).expect("key listed above");
            out.entries.insert(k[prefix.len()..].to_string(), v);
        }
        out
    }

    /// Fails if any key was left unconsumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &KeyValues, prefix: &str) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, (v, _)) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Formats a float so that parsing it back yields the identical bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_reports_lines() {
        let kv = KeyValues::parse("# header\nbeta = 0.97\n\ngamma=2\n").unwrap();
        assert_eq!(kv.get("beta"), Some("0.97"));
        assert_eq!(kv.get("gamma"), Some("2"));

        let err = KeyValues::parse("beta = 0.97\nthis is wrong\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut kv = KeyValues::parse("a = 1\nb = 2\n").unwrap();
        assert_eq!(kv.take::<f64>("a").unwrap(), Some(1.0));
        let err = kv.finish().unwrap_err();
        assert!(err.to_string().contains("unknown key `b`"));
    }

    #[test]
    fn bad_value_names_line() {
        let mut kv = KeyValues::parse("\n\nbeta = abc\n").unwrap();
        let err = kv.take::<f64>("beta").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 1e300] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
