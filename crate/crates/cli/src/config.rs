//! Flat TOML run configuration: model and training keys side by side.

use std::path::Path;

use anyhow::{Context, Result};
use crs_core::model::ModelConfig;
use crs_core::trainer::TrainConfig;

const MODEL_KEYS: [&str; 5] = ["d", "d_llm", "num_rgcn_layers", "activation", "num_attention_heads"];

/// Splits a flat table into model and training settings. `seed` seeds both
/// the parameter initialization and the training stream.
pub fn parse_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    let (mut model, mut train) = (toml::Table::new(), toml::Table::new());
    for (key, value) in table {
        if MODEL_KEYS.contains(&key.as_str()) {
            model.insert(key, value);
        } else {
            train.insert(key, value);
        }
    }
    if let Some(seed) = train.get("seed") {
        model.insert("seed".into(), seed.clone());
    }
    let model: ModelConfig = toml::Value::Table(model).try_into().context("model settings")?;
    let train: TrainConfig = toml::Value::Table(train).try_into().context("training settings")?;
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

pub fn load_config(path: &Path) -> Result<(ModelConfig, TrainConfig)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}
