//! Flat `key = value` configuration files for [`TrainConfig`].
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors. When
//! `base_lr` is absent it follows the batch size as `0.04·B/256`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{Augmentation, TrainConfig};

pub const KEYS: &[&str] = &[
    "eta",
    "sinkhorn_iters",
    "lambda",
    "batch_size",
    "epochs",
    "hidden",
    "embed_dim",
    "num_clusters",
    "base_lr",
    "momentum",
    "weight_decay",
    "restart_period",
    "noise_sigma",
    "feature_dropout_prob",
    "scale_jitter",
    "seed",
    "orth_mode",
    "keep_diagonal",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

/// Applies one `key`/`value` pair to `cfg`.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let aug = &mut cfg.augmentation;
    match key {
        "eta" => cfg.eta = parse(key, value)?,
        "sinkhorn_iters" => cfg.sinkhorn_iters = parse(key, value)?,
        "lambda" => cfg.lambda = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "hidden" => {
            cfg.hidden = if value.is_empty() {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_>>()?
            }
        }
        "embed_dim" => cfg.embed_dim = parse(key, value)?,
        "num_clusters" => cfg.num_clusters = parse(key, value)?,
        "base_lr" => cfg.base_lr = parse(key, value)?,
        "momentum" => cfg.momentum = parse(key, value)?,
        "weight_decay" => cfg.weight_decay = parse(key, value)?,
        "restart_period" => cfg.restart_period = parse(key, value)?,
        "noise_sigma" => aug.noise_sigma = parse(key, value)?,
        "feature_dropout_prob" => aug.feature_dropout_prob = parse(key, value)?,
        "scale_jitter" => aug.scale_jitter = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "orth_mode" => {
            cfg.orth = value
                .parse()
                .map_err(|e: Error| Error::Config(e.to_string()))?
        }
        "keep_diagonal" => cfg.keep_diagonal = parse_bool(key, value)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut lr_given = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        apply(&mut cfg, key, value.trim())
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        lr_given |= key == "base_lr";
    }
    if !lr_given {
        cfg.base_lr = 0.04 * cfg.batch_size as f64 / 256.0;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Serializes every key; `parse_config(&to_text(c)) == c` for valid `c`.
pub fn to_text(cfg: &TrainConfig) -> String {
    let Augmentation {
        noise_sigma,
        feature_dropout_prob,
        scale_jitter,
    } = cfg.augmentation;
    let hidden: Vec<String> = cfg.hidden.iter().map(usize::to_string).collect();
    let mut out = String::new();
    let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
    kv("eta", format!("{:?}", cfg.eta));
    kv("sinkhorn_iters", cfg.sinkhorn_iters.to_string());
    kv("lambda", format!("{:?}", cfg.lambda));
    kv("batch_size", cfg.batch_size.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("hidden", hidden.join(","));
    kv("embed_dim", cfg.embed_dim.to_string());
    kv("num_clusters", cfg.num_clusters.to_string());
    kv("base_lr", format!("{:?}", cfg.base_lr));
    kv("momentum", format!("{:?}", cfg.momentum));
    kv("weight_decay", format!("{:?}", cfg.weight_decay));
    kv("restart_period", cfg.restart_period.to_string());
    kv("noise_sigma", format!("{noise_sigma:?}"));
    kv("feature_dropout_prob", format!("{feature_dropout_prob:?}"));
    kv("scale_jitter", format!("{scale_jitter:?}"));
    kv("seed", cfg.seed.to_string());
    kv("orth_mode", cfg.orth.to_string());
    kv("keep_diagonal", cfg.keep_diagonal.to_string());
    out
}
