//! Plain-text configuration: `[section]` headers over `key = value` lines,
//! `#` comments. Flags override file values; every run echoes the fully
//! resolved configuration so experiments are reproducible from their logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing key {section}.{key}")]
    Missing { section: String, key: String },
    #[error("{section}.{key}: expected {expected}, got {value:?}")]
    BadValue { section: String, key: String, expected: &'static str, value: String },
    #[error("unknown key {section}.{key}")]
    UnknownKey { section: String, key: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ConfigFile::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            if let Some(name) = stripped.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Parse { line, msg: "unclosed section header".into() })?;
                section = name.trim().to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Parse { line, msg: format!("expected key = value, got {stripped:?}") });
            };
            if section.is_empty() {
                return Err(ConfigError::Parse { line, msg: "key before any [section]".into() });
            }
            cfg.sections
                .get_mut(&section)
                .expect("section entry created above")
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn parse_with<T>(&self, section: &str, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                expected,
                value: raw.into(),
            }),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parse_with::<usize>(section, key, "unsigned integer")?.unwrap_or(default))
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parse_with::<u64>(section, key, "unsigned integer")?.unwrap_or(default))
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parse_with::<f64>(section, key, "number")?.unwrap_or(default))
    }

    pub fn get_str<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    /// Rejects keys outside the allowed set for a section (typo guard).
    pub fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<(), ConfigError> {
        if let Some(map) = self.sections.get(section) {
            for key in map.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(ConfigError::UnknownKey { section: section.into(), key: key.clone() });
                }
            }
        }
        Ok(())
    }

    /// Canonical dump: sorted sections and keys, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, map) in &self.sections {
            let _ = writeln!(out, "[{section}]");
            for (key, value) in map {
                let _ = writeln!(out, "{key} = {value}");
            }
            let _ = writeln!(out);
        }
        out
    }
}
