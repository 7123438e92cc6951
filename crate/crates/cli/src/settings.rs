use std::path::Path;

use anyhow::{Context, Result};
use framekws::encoders::ModelConfig;
use framekws::eval::TwvConfig;
use framekws::search::DecodeConfig;
use framekws::synth::SynthConfig;
use framekws::training::{LossConfig, SamplerConfig, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// How many IV and OOV queries `synth` lists per evaluation split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryCounts {
    pub iv: usize,
    pub oov: usize,
}

impl Default for QueryCounts {
    fn default() -> Self {
        Self { iv: 50, oov: 20 }
    }
}

/// Every tunable value, one table per concern.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub synth: SynthConfig,
    pub queries: QueryCounts,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub schedule: Schedule,
    pub decode: DecodeConfig,
    pub twv: TwvConfig,
}

/// Settings plus the keys the user set explicitly (file or overrides).
pub struct Resolved {
    pub settings: Settings,
    user: Table,
}

impl Resolved {
    /// Whether `path` (dotted) was given by the user rather than defaulted.
    pub fn is_set(&self, path: &str) -> bool {
        let mut t = &self.user;
        let mut parts = path.split('.').peekable();
        while let Some(p) = parts.next() {
            match (t.get(p), parts.peek()) {
                (Some(_), None) => return true,
                (Some(Value::Table(inner)), Some(_)) => t = inner,
                _ => return false,
            }
        }
        false
    }
}

impl Settings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            loss: self.loss,
            sampler: self.sampler,
            schedule: self.schedule.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }
}

pub fn config_error(msg: String) -> anyhow::Error {
    framekws::Error::Config(msg).into()
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `a.b.c=value`; the value is read as TOML and falls back to a
/// bare string.
fn parse_override(s: &str) -> Result<Table> {
    let Some((key, raw)) = s.split_once('=') else {
        return Err(config_error(format!("override {s:?} is not KEY=VALUE")));
    };
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("override key {key:?} is malformed")));
    }
    let last = parts.pop().expect("nonempty");
    let mut table = Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(table));
        table = outer;
    }
    Ok(table)
}

/// Defaults, then the config file, then each override in order.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Resolved> {
    let mut user = Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let t: Table = toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        merge(&mut user, t);
    }
    for o in overrides {
        merge(&mut user, parse_override(o)?);
    }
    let mut all = match Value::try_from(Settings::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("settings serialize to a table"),
    };
    merge(&mut all, user.clone());
    let settings: Settings = Value::Table(all)
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.message().to_string()))?;
    Ok(Resolved { settings, user })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "[schedule]\nlearning_rate = 0.001\nmax_epochs = 7\n").unwrap();
        let r = resolve(Some(&file), &["schedule.max_epochs=3".into(), "decode.aggregator=max".into()]).unwrap();
        assert_eq!(r.settings.schedule.learning_rate, 1e-3);
        assert_eq!(r.settings.schedule.max_epochs, 3);
        assert_eq!(r.settings.decode.aggregator, framekws::search::Aggregator::Max);
        assert_eq!(r.settings.model, ModelConfig::default());
        assert!(r.is_set("schedule.max_epochs"));
        assert!(!r.is_set("model.feature_dim"));
    }

    #[test]
    fn echo_reloads_to_the_same_settings() {
        let s = resolve(None, &["model.doc_layers=[8, 8]".into()]).unwrap().settings;
        let back: Settings = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = resolve(None, &["schedule.learning_rat=1".into()]).err().unwrap();
        assert!(matches!(e.downcast_ref::<framekws::Error>(), Some(framekws::Error::Config(_))));
        assert!(resolve(None, &["nonsense".into()]).is_err());
    }
}
