//! Flat TOML decoding configs.
//!
//! ```toml
//! alpha = 18
//! beta = 0.2
//! N = 16
//! sigma = 1e-2
//! lambda = 1e-4
//! T = 4.5          # inf always passes, -inf always fails
//! top_k = 60
//! delta = 1e-5     # optional, default 1e-5
//! mode = "adaptive"
//! seed = 0
//! # baseline mode only
//! eps_G = 8.0
//! query_budget = 1000
//! q = 1.0
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use toml::{Table, Value};

use crate::decoder::{BaselineConfig, DecodingConfig, DecodingMode};
use crate::divergence::RenyiOrder;
use crate::error::{Error, Result};
use crate::screening::ScreeningConfig;
use crate::serde_ext::extended_f64;

pub const DEFAULT_DELTA: f64 = 1e-5;

const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "beta",
    "N",
    "sigma",
    "lambda",
    "T",
    "top_k",
    "delta",
    "mode",
    "seed",
    "eps_G",
    "query_budget",
    "q",
    "screen_symmetric",
];

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

struct Fields(Table);

impl Fields {
    fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(v)) if !v.is_nan() => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(Value::String(s)) => extended_f64::parse(s)
                .map(Some)
                .ok_or_else(|| config_err(key, format!("`{s}` is not a number"))),
            Some(other) => Err(config_err(key, format!("expected a number, got {}", other.type_str()))),
        }
    }

    fn required_real(&self, key: &str) -> Result<f64> {
        self.real(key)?.ok_or_else(|| config_err(key, "missing"))
    }

    fn count(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(Value::String(s)) => s
                .parse::<u64>()
                .map(Some)
                .map_err(|_| config_err(key, format!("`{s}` is not a non-negative integer"))),
            Some(other) => Err(config_err(key, format!("expected a non-negative integer, got {other}"))),
        }
    }

    fn required_count(&self, key: &str) -> Result<u64> {
        self.count(key)?.ok_or_else(|| config_err(key, "missing"))
    }
}

pub fn parse_config(text: &str) -> Result<DecodingConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_err("(syntax)", e.message().to_string()))?;
    if let Some(unknown) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(config_err(unknown, "unknown key"));
    }
    let f = Fields(table);

    let alpha = RenyiOrder::new(f.required_real("alpha")?)
        .map_err(|e| config_err("alpha", e.to_string()))?;
    let mode = match f.get("mode") {
        None => DecodingMode::Adaptive,
        Some(Value::String(s)) if s == "adaptive" => DecodingMode::Adaptive,
        Some(Value::String(s)) if s == "baseline" => DecodingMode::Baseline,
        Some(other) => {
            return Err(config_err("mode", format!("{other} is neither \"adaptive\" nor \"baseline\"")))
        }
    };
    let symmetric = match f.get("screen_symmetric") {
        None => false,
        Some(Value::Boolean(b)) => *b,
        Some(other) => return Err(config_err("screen_symmetric", format!("expected a boolean, got {other}"))),
    };
    let baseline = match mode {
        DecodingMode::Adaptive => None,
        DecodingMode::Baseline => Some(BaselineConfig {
            eps_budget: f.required_real("eps_G")?,
            query_budget: f.required_count("query_budget")?,
            subsample_q: f.real("q")?.unwrap_or(1.0),
        }),
    };
    let top_k = f.required_count("top_k")?;
    let n = f.required_count("N")?;

    let cfg = DecodingConfig {
        alpha,
        beta: f.required_real("beta")?,
        ensemble_size: n as usize,
        screening: ScreeningConfig {
            lambda_screen: f.required_real("lambda")?,
            sigma: f.required_real("sigma")?,
            threshold: f.required_real("T")?,
            top_k: top_k as usize,
            alpha,
            symmetric,
            add_noise: true,
        },
        delta: f.real("delta")?.unwrap_or(DEFAULT_DELTA),
        mode,
        baseline,
        seed: f.count("seed")?.unwrap_or(0),
    };
    // top_k is checked against the vocabulary once models are loaded
    cfg.validate(usize::MAX).map_err(into_config_error)?;
    Ok(cfg)
}

pub(crate) fn into_config_error(e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => config_err(field, reason),
        Error::InvalidOrder(v) => config_err("alpha", format!("{v} must be finite and > 1")),
        other => other,
    }
}

pub fn load_config(path: &Path) -> Result<DecodingConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn real(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Inverse of [`parse_config`].
pub fn render_config(cfg: &DecodingConfig) -> String {
    let s = &cfg.screening;
    let mut out = String::new();
    let _ = writeln!(out, "alpha = {}", real(cfg.alpha.value()));
    let _ = writeln!(out, "beta = {}", real(cfg.beta));
    let _ = writeln!(out, "N = {}", cfg.ensemble_size);
    let _ = writeln!(out, "sigma = {}", real(s.sigma));
    let _ = writeln!(out, "lambda = {}", real(s.lambda_screen));
    let _ = writeln!(out, "T = {}", real(s.threshold));
    let _ = writeln!(out, "top_k = {}", s.top_k);
    let _ = writeln!(out, "delta = {}", real(cfg.delta));
    let mode = match cfg.mode {
        DecodingMode::Adaptive => "adaptive",
        DecodingMode::Baseline => "baseline",
    };
    let _ = writeln!(out, "mode = \"{mode}\"");
    if cfg.seed <= i64::MAX as u64 {
        let _ = writeln!(out, "seed = {}", cfg.seed);
    } else {
        let _ = writeln!(out, "seed = \"{}\"", cfg.seed);
    }
    if s.symmetric {
        let _ = writeln!(out, "screen_symmetric = true");
    }
    if let Some(b) = &cfg.baseline {
        let _ = writeln!(out, "eps_G = {}", real(b.eps_budget));
        let _ = writeln!(out, "query_budget = {}", b.query_budget);
        let _ = writeln!(out, "q = {}", real(b.subsample_q));
    }
    out
}
