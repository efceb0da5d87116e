//! Plain-text `key = value` configuration files. `#` starts a comment;
//! blank lines are skipped; duplicate or unknown keys are errors.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: u32, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: u32, key: String },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("key `{key}`: cannot parse `{value}` as {want}")]
    BadValue { key: String, value: String, want: &'static str },
}

/// Parsed key/value file with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<KvConfig, ConfigError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = (idx + 1) as u32;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed { line, text: stripped.to_string() })?;
            let key = key.trim();
            let ok_key = !key.is_empty()
                && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
            if !ok_key {
                return Err(ConfigError::Malformed { line, text: stripped.to_string() });
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
        }
        Ok(KvConfig { values })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|k| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// Errors on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { key: key.clone() });
            }
        }
        Ok(())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse_with(key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, "a number", |s| s.parse().ok())
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.parse_with(key, "true or false", |s| match s {
            "true" | "1" | "yes" | "on" => Some(true),
            "false" | "0" | "no" | "off" => Some(false),
            _ => None,
        })
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.parse_with(key, "a comma-separated list of numbers", |s| {
            s.split(',').map(|t| t.trim().parse::<f64>().ok()).collect::<Option<Vec<f64>>>()
        })
    }

    pub fn get_str_list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key)
            .map(|s| s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect())
    }

    fn parse_with<T>(
        &self,
        key: &str,
        want: &'static str,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>, ConfigError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => f(raw).map(Some).ok_or_else(|| ConfigError::BadValue {
                key: key.to_string(),
                value: raw.clone(),
                want,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let cfg = KvConfig::parse(
            "# a comment\nworkload = aes\nn_test = 2000 # trailing\ncompress = true\npcts = 0.5, 1, 2\n",
        )
        .unwrap();
        assert_eq!(cfg.get("workload"), Some("aes"));
        assert_eq!(cfg.get_u64("n_test").unwrap(), Some(2000));
        assert_eq!(cfg.get_bool("compress").unwrap(), Some(true));
        assert_eq!(cfg.get_f64_list("pcts").unwrap(), Some(vec![0.5, 1.0, 2.0]));
        assert_eq!(cfg.get_u64("absent").unwrap(), None);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            KvConfig::parse("a = 1\na = 2").unwrap_err(),
            ConfigError::DuplicateKey { line: 2, .. }
        ));
        assert!(matches!(
            KvConfig::parse("just some words").unwrap_err(),
            ConfigError::Malformed { line: 1, .. }
        ));
    }

    #[test]
    fn key_schema_enforced() {
        let cfg = KvConfig::parse("known = 1\nmystery = 2").unwrap();
        assert!(cfg.check_keys(&["known"]).is_err());
        assert!(cfg.check_keys(&["known", "mystery"]).is_ok());
    }

    #[test]
    fn bad_typed_value_is_an_error() {
        let cfg = KvConfig::parse("n = twelve").unwrap();
        assert!(matches!(cfg.get_u64("n").unwrap_err(), ConfigError::BadValue { .. }));
    }
}
