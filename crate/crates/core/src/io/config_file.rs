//! Flat `key = value` training configs. `#` starts a comment.

use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::TrainConfig;

/// Applies every line of `text` on top of the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse_line(i + 1, format!("expected 'key = value', got '{line}'"))
        })?;
        config
            .set(key.trim(), value.trim())
            .map_err(|e| Error::parse_line(i + 1, e.to_string()))?;
    }
    config.validate().map_err(|e| Error::Parse {
        location: "config".into(),
        message: e.to_string(),
    })?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_config(config: &TrainConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.to_text()).map_err(|e| Error::io(path, e))
}
