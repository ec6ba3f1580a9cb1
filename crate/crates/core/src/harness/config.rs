use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::train::TrainerConfig;

/// Keys owned by the experiment rather than by a single training run.
pub const RUN_KEYS: [&str; 3] = ["name", "output_dir", "seeds"];

/// A training configuration plus run name, output directory and seed list.
///
/// Config files are flat TOML: `key = value` lines, `#` comments, no tables.
/// `env`, `mixer`, `seed` and `total_env_steps` are required; `seeds`
/// (a list) overrides `seed` and runs each entry in turn.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub trainer: TrainerConfig,
}

#[derive(Deserialize)]
struct RunKeys {
    name: Option<String>,
    output_dir: Option<String>,
    seeds: Option<Vec<u64>>,
}

/// Every key accepted by [`TrainerConfig`].
pub fn trainer_keys() -> Vec<String> {
    let mut probe = TrainerConfig::new("matrix3", crate::mixer::MixerKind::Vdn, 0, 0);
    probe.meta_batch_episodes = Some(1);
    match Value::try_from(&probe) {
        Ok(Value::Table(t)) => t.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(origin: &str, text: &str, err: &toml::de::Error) -> Error {
    let message = match err.span() {
        Some(span) => format!("line {}: {}", line_of(text, span.start), err.message().trim()),
        None => err.message().trim().to_string(),
    };
    Error::Parse {
        path: origin.to_string(),
        message,
    }
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
}

impl ExperimentConfig {
    /// Parses config text. `origin` names the source in error messages and
    /// provides the default run name (its file stem).
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| toml_error(origin, text, &e))?;
        let known = trainer_keys();
        for (key, value) in &table {
            if !known.iter().any(|k| k == key) && !RUN_KEYS.contains(&key.as_str()) {
                let at = key_line(text, key).map_or(String::new(), |l| format!(" (line {})", l + 1));
                return Err(Error::Config(format!("{origin}: unknown key `{key}`{at}")));
            }
            if value.is_table() {
                return Err(Error::Config(format!("{origin}: `{key}` is a table; config files are flat")));
            }
        }
        let trainer: TrainerConfig = toml::from_str(text).map_err(|e| toml_error(origin, text, &e))?;
        let run: RunKeys = toml::from_str(text).map_err(|e| toml_error(origin, text, &e))?;
        trainer.validate()?;
        let name = run.name.unwrap_or_else(|| {
            Path::new(origin)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("run")
                .to_string()
        });
        let seeds = run.seeds.unwrap_or_else(|| vec![trainer.seed]);
        if seeds.is_empty() {
            return Err(Error::Config(format!("{origin}: `seeds` is empty")));
        }
        let output_dir = run
            .output_dir
            .map_or_else(|| Path::new("runs").join(&name), PathBuf::from);
        Ok(Self {
            name,
            output_dir,
            seeds,
            trainer,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Loads `path` and applies `key=value` overrides before parsing.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let origin = path.display().to_string();
        if overrides.is_empty() {
            return Self::parse_str(&text, &origin);
        }
        let text = apply_overrides(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{origin}: {m}")),
            other => other,
        })?;
        Self::parse_str(&text, &origin)
    }

    /// Training configuration for one seed of the experiment.
    pub fn for_seed(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            ..self.trainer.clone()
        }
    }

    /// Fully resolved config text; parsing it gives back `self`.
    pub fn to_toml(&self) -> Result<String> {
        let mut table = match Value::try_from(&self.trainer) {
            Ok(Value::Table(t)) => t,
            Ok(_) => return Err(Error::Config("trainer config did not serialize to a table".into())),
            Err(e) => return Err(Error::Config(e.to_string())),
        };
        table.insert("name".into(), Value::String(self.name.clone()));
        table.insert("output_dir".into(), Value::String(self.output_dir.display().to_string()));
        let seeds = self.seeds.iter().map(|&s| Value::Integer(s as i64)).collect();
        table.insert("seeds".into(), Value::Array(seeds));
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Applies `key=value` overrides to config text. Values are read as TOML
/// when they parse as such and as bare strings otherwise, so `mixer=qmix`
/// and `lr=1e-3` both work.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        table.insert(key.to_string(), value);
    }
    toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
}
