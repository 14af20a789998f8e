//! Flat `key = value` training configs. `#` starts a comment; unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::atomic::read_file;
use crate::net::Variant;
use crate::train::TrainConfig;

pub const CONFIG_KEYS: [&str; 12] = [
    "learning_rate",
    "lambda",
    "batch_size",
    "max_epochs",
    "patience",
    "conv_layers",
    "filters",
    "local_layers",
    "kernel",
    "variant",
    "noise_scale",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Sets one key on `config`.
pub fn apply_setting(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let v = value.trim();
    match key.trim() {
        "learning_rate" => config.learning_rate = parse(key, v)?,
        "lambda" => config.lambda = parse(key, v)?,
        "batch_size" => config.batch_size = parse(key, v)?,
        "max_epochs" => config.max_epochs = parse(key, v)?,
        "patience" => config.patience = parse(key, v)?,
        "conv_layers" => config.arch.conv_layers = parse(key, v)?,
        "filters" => config.arch.filters = parse(key, v)?,
        "local_layers" => config.arch.local_layers = parse(key, v)?,
        "kernel" => config.arch.kernel = parse(key, v)?,
        "variant" => {
            config.arch.variant = Variant::from_str(v).map_err(|e| Error::Config(e.to_string()))?
        }
        "noise_scale" => config.noise_scale = parse(key, v)?,
        "seed" => config.seed = parse(key, v)?,
        other => {
            return Err(Error::Config(format!(
                "unknown key {other:?} (known: {})",
                CONFIG_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Applies every `key = value` line of `text` on top of `config`.
pub fn apply_text(config: &mut TrainConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                i + 1
            ))
        })?;
        apply_setting(config, k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    apply_text(&mut c, text)?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Every key, one per line, in [`CONFIG_KEYS`] order. Floats use the
/// shortest representation that parses back to the same value.
pub fn to_kv(c: &TrainConfig) -> String {
    let values = [
        c.learning_rate.to_string(),
        c.lambda.to_string(),
        c.batch_size.to_string(),
        c.max_epochs.to_string(),
        c.patience.to_string(),
        c.arch.conv_layers.to_string(),
        c.arch.filters.to_string(),
        c.arch.local_layers.to_string(),
        c.arch.kernel.to_string(),
        c.arch.variant.to_string(),
        c.noise_scale.to_string(),
        c.seed.to_string(),
    ];
    CONFIG_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
