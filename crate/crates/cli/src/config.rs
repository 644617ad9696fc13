use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// `key = value` settings; `#` starts a comment. Keys are the long flag
/// names without dashes, e.g. `epochs = 5` or `tau-c = 0.5`. A key may be
/// limited to one subcommand as `train.mode = ps`.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
    scope: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", i + 1))?;
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(FileConfig {
            values,
            scope: None,
        })
    }

    /// View in which `scope.key` takes precedence over `key`.
    pub fn scoped(&self, scope: &str) -> FileConfig {
        FileConfig {
            values: self.values.clone(),
            scope: Some(scope.to_string()),
        }
    }

    fn lookup(&self, key: &str) -> Option<(String, &String)> {
        if let Some(scope) = &self.scope {
            let scoped = format!("{}.{}", scope, key);
            if let Some(v) = self.values.get(&scoped) {
                return Some((scoped, v));
            }
        }
        self.values.get(key).map(|v| (key.to_string(), v))
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.lookup(key) {
            None => Ok(None),
            Some((k, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key '{}': bad value '{}': {}", k, v, e)),
        }
    }

    /// Flag value if given, else the config file value, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn resolve_flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }
}
