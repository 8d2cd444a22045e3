//! Config loading, path checks and JSON output.

use std::path::{Path, PathBuf};

use hop_core::HopConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

/// A parsed command config plus the directory its relative paths resolve
/// against.
pub struct ConfigFile {
    pub path: PathBuf,
    pub value: Value,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::usage(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{} is not valid JSON: {e}", path.display())))?;
        if !value.is_object() {
            return Err(CliError::usage(format!(
                "{} must hold a JSON object",
                path.display()
            )));
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            value,
        })
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.value.clone())
            .map_err(|e| CliError::usage(format!("{}: {e}", self.path.display())))
    }

    pub fn base(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base().join(p)
        }
    }
}

/// Recursively replaces the keys of `base` that `patch` sets.
pub fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// `base` with the fields in `patch` replaced.
pub fn merged<T: Serialize + DeserializeOwned>(
    base: &T,
    patch: Option<&Value>,
    what: &str,
) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(p) = patch {
        if !p.is_object() {
            return Err(CliError::usage(format!("{what} must be a JSON object")));
        }
        overlay(&mut v, p);
    }
    serde_json::from_value(v).map_err(|e| CliError::usage(format!("{what}: {e}")))
}

pub const PRESETS: [&str; 3] = ["full", "toy", "gradcheck"];

fn preset(name: &str) -> Result<HopConfig> {
    match name {
        "full" => Ok(HopConfig::full()),
        "toy" => Ok(HopConfig::toy()),
        "gradcheck" => Ok(HopConfig::gradcheck()),
        other => Err(CliError::usage(format!(
            "unknown model preset {other:?}; valid presets: {}",
            PRESETS.join(", ")
        ))),
    }
}

/// A model config given as a preset name, as a preset plus overrides
/// (`{"preset": "toy", "frames": 40}`), or in full.
pub fn model_config(spec: &Value, file: &ConfigFile) -> Result<HopConfig> {
    let mut cfg = match spec {
        Value::String(name) => preset(name)?,
        Value::Object(map) => match map.get("preset") {
            Some(Value::String(name)) => {
                let mut rest = map.clone();
                rest.remove("preset");
                merged(&preset(name)?, Some(&Value::Object(rest)), "model")?
            }
            Some(_) => return Err(CliError::usage("model.preset must be a string")),
            None => serde_json::from_value(spec.clone())
                .map_err(|e| CliError::usage(format!("model: {e}")))?,
        },
        _ => return Err(CliError::usage("model must be a preset name or an object")),
    };
    for p in [&mut cfg.vocab.table_file, &mut cfg.vocab.token_file]
        .into_iter()
        .flatten()
    {
        *p = file.resolve(p);
        require_file(p, "embedding file")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what} {} does not exist",
            p.display()
        )))
    }
}

pub fn require_dir(p: &Path, what: &str) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what} {} does not exist",
            p.display()
        )))
    }
}

pub fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", p.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes a line to stdout; a closed pipe is not an error.
pub fn print_line(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::usage(format!("cannot write to stdout: {e}")))
        }
        _ => Ok(()),
    }
}
