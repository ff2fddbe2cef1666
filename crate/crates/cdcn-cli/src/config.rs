//! Flat key/value run configuration. Each subcommand declares its full key
//! universe with defaults; a named preset, a config file, and command-line
//! flags overlay those in that order. Unknown keys are rejected, and every
//! run writes its fully resolved configuration next to its outputs so a run
//! can be reproduced from the artifact directory alone.

use std::collections::BTreeMap;
use std::path::Path;

use cdcn::layers::ThetaCfg;
use cdcn::model::ChannelScale;
use cdcn::{Error, Result};

/// One subcommand's key universe: defaults plus named preset overlays.
pub struct ConfigSpec {
    pub defaults: &'static [(&'static str, &'static str)],
    pub presets: &'static [(&'static str, &'static [(&'static str, &'static str)])],
}

/// Fully resolved configuration: every known key has a value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{origin} line {}: expected key = value, got {line:?}", i + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("{origin} line {}: empty key", i + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "{origin} line {}: key {key:?} is set twice",
                i + 1
            )));
        }
    }
    Ok(map)
}

impl RunConfig {
    /// Layers defaults, the selected preset, file values, and flag values.
    /// The preset name itself may come from the file or the flags.
    pub fn resolve(
        spec: &ConfigSpec,
        file: Option<&Path>,
        flags: &BTreeMap<String, String>,
    ) -> Result<RunConfig> {
        let file_map = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
                parse_config_text(&text, &path.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        let known: Vec<&str> = spec.defaults.iter().map(|(k, _)| *k).collect();
        for (origin, map) in [("config file", &file_map), ("flag", flags)] {
            for key in map.keys() {
                if !known.contains(&key.as_str()) {
                    return Err(Error::Config(format!(
                        "unknown {origin} key {key:?}; known keys: {}",
                        known.join(", ")
                    )));
                }
            }
        }

        let mut values: BTreeMap<String, String> = spec
            .defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();

        let preset_name = flags
            .get("preset")
            .or_else(|| file_map.get("preset"))
            .cloned()
            .or_else(|| values.get("preset").cloned());
        if let Some(name) = &preset_name {
            let overlay = spec
                .presets
                .iter()
                .find(|(p, _)| p == name)
                .map(|(_, kv)| *kv)
                .ok_or_else(|| {
                    let names: Vec<&str> = spec.presets.iter().map(|(p, _)| *p).collect();
                    Error::Config(format!(
                        "unknown preset {name:?}; available: {}",
                        names.join(", ")
                    ))
                })?;
            for (k, v) in overlay {
                values.insert(k.to_string(), v.to_string());
            }
            values.insert("preset".to_string(), name.clone());
        }
        for (k, v) in &file_map {
            values.insert(k.clone(), v.clone());
        }
        for (k, v) in flags {
            values.insert(k.clone(), v.clone());
        }
        Ok(RunConfig { values })
    }

    /// Renders the resolved configuration as sorted `key = value` lines.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("resolved.cfg");
        std::fs::write(&path, self.emit()).map_err(|e| Error::io_at(&path, e))?;
        Ok(())
    }

    pub fn str_value(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("missing config key {key:?}")))
    }

    /// Non-empty string value; empty means the caller must treat the key as
    /// unset, which for required keys is an error naming the key.
    pub fn required(&self, key: &str) -> Result<&str> {
        let v = self.str_value(key)?;
        if v.is_empty() {
            return Err(Error::Config(format!("config key {key:?} is required")));
        }
        Ok(v)
    }

    pub fn usize_value(&self, key: &str) -> Result<usize> {
        let v = self.str_value(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?} must be a non-negative integer, got {v:?}")))
    }

    pub fn u64_value(&self, key: &str) -> Result<u64> {
        let v = self.str_value(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?} must be a non-negative integer, got {v:?}")))
    }

    pub fn f64_value(&self, key: &str) -> Result<f64> {
        let v = self.str_value(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?} must be a number, got {v:?}")))
    }

    pub fn bool_value(&self, key: &str) -> Result<bool> {
        match self.str_value(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::Config(format!(
                "key {key:?} must be true or false, got {other:?}"
            ))),
        }
    }

    pub fn scale_value(&self, key: &str) -> Result<ChannelScale> {
        ChannelScale::parse(self.str_value(key)?)
    }

    /// Combines `theta_mode` (fixed | adaptive) with `theta`.
    pub fn theta_value(&self) -> Result<ThetaCfg> {
        let theta = self.f64_value("theta")?;
        match self.str_value("theta_mode")? {
            "fixed" => Ok(ThetaCfg::Fixed(theta)),
            "adaptive" => Ok(ThetaCfg::Adaptive(theta)),
            other => Err(Error::Config(format!(
                "theta_mode must be fixed or adaptive, got {other:?}"
            ))),
        }
    }
}
