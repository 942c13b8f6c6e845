//! Plain `key = value` training configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key            | type                     | default       |
//! |----------------|--------------------------|---------------|
//! | `mode`         | pixel, grad, eoren, compose | eoren      |
//! | `epochs_total` | integer                  | 1000          |
//! | `epochs_tuner` | integer                  | 50            |
//! | `lr_edge`      | real                     | 0.0001        |
//! | `lr_tuner`     | real                     | 0.01          |
//! | `lambda`       | real in [0, 1]           | 0.5           |
//! | `hidden_dims`  | comma-separated integers | 256,256,256   |
//! | `omega0`       | real                     | 30            |
//! | `seed`         | integer                  | 0             |
//! | `log_every`    | integer                  | 50            |
//! | `tuner`        | adam, closed_form        | adam          |
//! | `compose.loss` | blended, weighted        | blended       |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use eoren::training::TrainConfig;

use crate::Failure;

pub const KEYS: &[&str] = &[
    "mode",
    "epochs_total",
    "epochs_tuner",
    "lr_edge",
    "lr_tuner",
    "lambda",
    "hidden_dims",
    "omega0",
    "seed",
    "log_every",
    "tuner",
    "compose.loss",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Failure::usage(format!("invalid value '{value}' for key '{key}': {e}")))
}

/// Applies one setting to `cfg`.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), Failure> {
    let value = value.trim();
    match key {
        "mode" => cfg.mode = parse_value(key, value)?,
        "epochs_total" => cfg.epochs_total = parse_value(key, value)?,
        "epochs_tuner" => cfg.epochs_tuner = parse_value(key, value)?,
        "lr_edge" => cfg.lr_edge = parse_value(key, value)?,
        "lr_tuner" => cfg.lr_tuner = parse_value(key, value)?,
        "lambda" => cfg.lambda = parse_value(key, value)?,
        "hidden_dims" => {
            cfg.hidden_dims = value
                .split(',')
                .map(|s| parse_value(key, s.trim()))
                .collect::<Result<_, _>>()?
        }
        "omega0" => cfg.omega0 = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "log_every" => cfg.log_every = parse_value(key, value)?,
        "tuner" => cfg.tuner_fit = parse_value(key, value)?,
        "compose.loss" => cfg.compose_loss = parse_value(key, value)?,
        _ => {
            return Err(Failure::usage(format!(
                "unknown configuration key '{key}' (known keys: {})",
                KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Splits `key=value`.
pub fn split_setting(line: &str) -> Result<(&str, &str), Failure> {
    match line.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => Err(Failure::usage(format!("expected key=value, got '{line}'"))),
    }
}

pub fn parse_text(text: &str, cfg: &mut TrainConfig) -> Result<(), Failure> {
    let mut seen = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = split_setting(line)
            .map_err(|e| Failure::usage(format!("line {}: {}", n + 1, e.message)))?;
        if seen.contains(&key) {
            return Err(Failure::usage(format!(
                "line {}: key '{key}' given twice",
                n + 1
            )));
        }
        seen.push(key);
        apply(cfg, key, value)?;
    }
    Ok(())
}

/// Defaults, then the file, then the `overrides` in order; validated.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        parse_text(&text, &mut cfg)?;
    }
    for (k, v) in overrides {
        apply(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every key with its resolved value; feeding the pairs back through
/// [`apply`] reproduces `cfg` exactly.
pub fn to_pairs(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let dims: Vec<String> = cfg.hidden_dims.iter().map(|d| d.to_string()).collect();
    [
        ("mode", cfg.mode.to_string()),
        ("epochs_total", cfg.epochs_total.to_string()),
        ("epochs_tuner", cfg.epochs_tuner.to_string()),
        ("lr_edge", cfg.lr_edge.to_string()),
        ("lr_tuner", cfg.lr_tuner.to_string()),
        ("lambda", cfg.lambda.to_string()),
        ("hidden_dims", dims.join(",")),
        ("omega0", cfg.omega0.to_string()),
        ("seed", cfg.seed.to_string()),
        ("log_every", cfg.log_every.to_string()),
        ("tuner", cfg.tuner_fit.to_string()),
        ("compose.loss", cfg.compose_loss.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    for (k, v) in pairs {
        apply(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
