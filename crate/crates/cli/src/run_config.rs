use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use basen_core::config::{parse_kv, KeyValue};
use basen_core::eeg::MuaConfig;
use basen_core::model::BasenConfig;
use basen_core::train::{SyntheticTaskConfig, TrainConfig};

/// Architecture, optimization, synthetic-task and EEG front-end settings
/// behind one flat key space.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: BasenConfig,
    pub train: TrainConfig,
    pub task: SyntheticTaskConfig,
    pub mua: MuaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: BasenConfig::desk(),
            train: TrainConfig::default(),
            task: SyntheticTaskConfig::default(),
            mua: MuaConfig::default(),
        }
    }
}

fn preset(name: &str) -> Result<BasenConfig> {
    Ok(match name {
        "desk" => BasenConfig::desk(),
        "full" => BasenConfig::default(),
        "tiny" => BasenConfig::tiny(),
        _ => bail!("unknown preset {name:?} (desk, full, tiny)"),
    })
}

impl RunConfig {
    /// Applies one key. Rate and channel keys are shared by the network and
    /// the synthetic task.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "preset" {
            self.model = preset(value)?;
            self.task.audio_rate = self.model.audio_rate;
            self.task.eeg_rate = self.model.eeg_rate;
            self.task.eeg_channels = self.model.eeg_channels;
            return Ok(());
        }
        let mut known = false;
        known |= self.model.set(key, value)?;
        known |= self.train.set(key, value)?;
        known |= self.task.set(key, value)?;
        match key {
            "a_gamma" => self.mua.a_gamma = value.parse().with_context(|| format!("invalid value {value:?} for a_gamma"))?,
            "a_delta" => self.mua.a_delta = value.parse().with_context(|| format!("invalid value {value:?} for a_delta"))?,
            _ if known => {}
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Defaults, then the file, then `overrides` (`key=value` each). A
    /// `preset` key is applied before everything else in its source.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        Self::default().extend(file, overrides)
    }

    /// Same as [`RunConfig::load`] starting from `self`.
    pub fn extend(self, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = self;
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply(&parse_kv(&text)?).with_context(|| format!("in config {}", path.display()))?;
        }
        let pairs: Vec<(String, String)> = overrides
            .iter()
            .map(|o| {
                o.split_once('=')
                    .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                    .with_context(|| format!("override {o:?} is not key=value"))
            })
            .collect::<Result<_>>()?;
        cfg.apply(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "preset") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Checks the network, optimizer and front end. The synthetic task is
    /// checked by the command that generates data.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.mua.validate(self.model.eeg_rate)?;
        Ok(())
    }

    /// Every key with its value, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = self.model.pairs();
        for (k, v) in self.train.pairs().into_iter().chain(self.task.pairs()) {
            if !lines.iter().any(|(have, _)| *have == k) {
                lines.push((k, v));
            }
        }
        lines.push(("a_gamma".into(), self.mua.a_gamma.to_string()));
        lines.push(("a_delta".into(), self.mua.a_delta.to_string()));
        lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
