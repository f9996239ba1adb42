//! Flat `key = value` training configuration files.
//!
//! Lines starting with `#` and blank lines are ignored. Every key is optional;
//! missing keys keep their [`TrainConfig::default`] value. Unknown or repeated
//! keys are errors.

use std::collections::BTreeMap;

use shrewd_core::losses::Variant;
use shrewd_core::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {content:?}")]
    Malformed { line: usize, content: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}")]
    InvalidValue { line: usize, key: String, value: String },
    #[error("variant shred requires lambda_cls > 0")]
    ShredWithoutCls,
}

pub const KEYS: [&str; 18] = [
    "code_length",
    "hidden",
    "lambda_sim",
    "lambda_kl",
    "lambda_cls",
    "gamma",
    "rho",
    "tau_floor",
    "beta_alpha",
    "beta_beta",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "seed",
    "variant",
];

/// A parsed configuration plus any non-fatal precedence warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: TrainConfig,
    pub warnings: Vec<String>,
}

pub fn parse(text: &str) -> Result<ParsedConfig, ConfigError> {
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Malformed {
                line,
                content: content.to_string(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Malformed {
                line,
                content: content.to_string(),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if seen.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
    }

    let mut cfg = TrainConfig::default();
    let mut variant = None;
    for (key, (line, value)) in &seen {
        let invalid = || ConfigError::InvalidValue {
            line: *line,
            key: key.clone(),
            value: value.clone(),
        };
        let real = || value.parse::<f64>().map_err(|_| invalid());
        let count = || value.parse::<usize>().map_err(|_| invalid());
        match key.as_str() {
            "code_length" => cfg.code_length = count()?,
            "hidden" => {
                cfg.hidden = if value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| w.trim().parse::<usize>().map_err(|_| invalid()))
                        .collect::<Result<_, _>>()?
                }
            }
            "lambda_sim" => cfg.lambda_sim = real()?,
            "lambda_kl" => cfg.lambda_kl = real()?,
            "lambda_cls" => cfg.lambda_cls = real()?,
            "gamma" => cfg.sim.gamma = real()?,
            "rho" => cfg.sim.rho = real()?,
            "tau_floor" => cfg.sim.tau_floor = real()?,
            "beta_alpha" => cfg.beta_alpha = real()?,
            "beta_beta" => cfg.beta_beta = real()?,
            "learning_rate" => cfg.adam.learning_rate = real()?,
            "adam_beta1" => cfg.adam.beta1 = real()?,
            "adam_beta2" => cfg.adam.beta2 = real()?,
            "adam_eps" => cfg.adam.eps = real()?,
            "batch_size" => cfg.batch_size = count()?,
            "epochs" => cfg.epochs = count()?,
            "seed" => cfg.seed = value.parse().map_err(|_| invalid())?,
            "variant" => variant = Some(value.parse::<Variant>().map_err(|_| invalid())?),
            _ => unreachable!("key list checked above"),
        }
    }

    let mut warnings = Vec::new();
    cfg.variant = Variant::from_cls_weight(cfg.lambda_cls);
    if let Some(v) = variant {
        warnings.extend(apply_variant(&mut cfg, v)?);
    }
    Ok(ParsedConfig { config: cfg, warnings })
}

/// Applies an explicit variant choice. SHREWD overrides a positive `λ2`
/// (returning a warning); SHRED cannot invent a missing `λ2`.
pub fn apply_variant(cfg: &mut TrainConfig, variant: Variant) -> Result<Option<String>, ConfigError> {
    let warning = match (variant, cfg.lambda_cls > 0.0) {
        (Variant::Shrewd, true) => Some(format!(
            "variant shrewd overrides lambda_cls = {}; using 0",
            cfg.lambda_cls
        )),
        (Variant::Shred, false) => return Err(ConfigError::ShredWithoutCls),
        _ => None,
    };
    cfg.set_variant(variant);
    Ok(warning)
}

/// Every setting as `key -> value`, in the file syntax.
pub fn to_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let hidden = if cfg.hidden.is_empty() {
        "none".to_string()
    } else {
        cfg.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    };
    [
        ("code_length", cfg.code_length.to_string()),
        ("hidden", hidden),
        ("lambda_sim", cfg.lambda_sim.to_string()),
        ("lambda_kl", cfg.lambda_kl.to_string()),
        ("lambda_cls", cfg.lambda_cls.to_string()),
        ("gamma", cfg.sim.gamma.to_string()),
        ("rho", cfg.sim.rho.to_string()),
        ("tau_floor", cfg.sim.tau_floor.to_string()),
        ("beta_alpha", cfg.beta_alpha.to_string()),
        ("beta_beta", cfg.beta_beta.to_string()),
        ("learning_rate", cfg.adam.learning_rate.to_string()),
        ("adam_beta1", cfg.adam.beta1.to_string()),
        ("adam_beta2", cfg.adam.beta2.to_string()),
        ("adam_eps", cfg.adam.eps.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("seed", cfg.seed.to_string()),
        ("variant", cfg.variant.as_str().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Serializes to the file syntax; `parse(&render(c))` reproduces `c`.
pub fn render(cfg: &TrainConfig) -> String {
    to_map(cfg)
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
