// SPDX-License-Identifier: Apache-2.0

//! Ordered `key: value` text, used for manifests, reports and config files.

use std::fmt::{self, Display};
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Floats are written with a fixed number of decimals so reports diff cleanly.
    pub fn push_f64(&mut self, key: impl Into<String>, value: f64, decimals: usize) -> &mut Self {
        self.entries
            .push((key.into(), format!("{value:.decimals$}")));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Accepts `key: value` and `key = value`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut kv = KeyValues::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let split = line
                .find([':', '='])
                .ok_or_else(|| format!("line {}: expected `key: value`, got {line:?}", n + 1))?;
            let (k, v) = line.split_at(split);
            kv.push(k.trim(), v[1..].trim());
        }
        Ok(kv)
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_string())
    }
}

impl Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}
