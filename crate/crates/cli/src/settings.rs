//! Layered settings: command-line flag, then config file, then environment
//! (seed only), then preset or built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const SEED_ENV: &str = "CRAN_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Flat `key = value` lines; `#` starts a comment. Keys use the long flag
    /// names, with `_` and `-` interchangeable.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {raw:?}", n + 1)))?;
            values.insert(normalize(key), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(&normalize(key)) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-").to_ascii_lowercase()
}

pub struct Layers<'a> {
    pub file: &'a ConfigFile,
}

impl Layers<'_> {
    /// Flag value if given, else the config file's, else `fallback`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, fallback: T) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.file.get(key)?.unwrap_or(fallback),
        })
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.file.get(key)?,
        })
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.pick_opt(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(raw) => raw.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}={raw:?} is not a u64"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected desk or paper)")),
        }
    }
}

/// Network and optimizer sizes of a preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetValues {
    pub m: usize,
    pub k: usize,
    pub depth: usize,
    /// `None` means `13 M K`.
    pub width: Option<usize>,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub validation_interval: usize,
    pub patience: usize,
}

impl Preset {
    pub fn values(self) -> PresetValues {
        match self {
            Preset::Desk => PresetValues {
                m: 3,
                k: 3,
                depth: 5,
                width: None,
                batch_size: 256,
                max_iterations: 50_000,
                validation_interval: 500,
                patience: 10,
            },
            Preset::Paper => PresetValues {
                m: 6,
                k: 6,
                depth: 11,
                width: Some(480),
                batch_size: 10_000,
                max_iterations: 50_000,
                validation_interval: 500,
                patience: 10,
            },
        }
    }
}
