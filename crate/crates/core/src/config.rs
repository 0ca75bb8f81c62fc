//! Plain-text `key = value` configuration for model and training settings.
//!
//! One setting per line; `#` starts a comment line. Every key has a
//! default, and unknown keys are rejected.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown setting {0:?}")]
    UnknownKey(String),
    #[error("setting {key}: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

/// Split a config file into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, msg: format!("expected `key = value`, got {line:?}") });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line: i + 1, msg: format!("bad key {k:?}") });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| invalid(key, format!("cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, format!("expected true/false, got {v:?}"))),
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    /// Position embedding width.
    pub d_e: usize,
    /// Offset embedding width.
    pub d_r: usize,
    /// Interaction MLP hidden width.
    pub d_h: usize,
    pub tcn_layers: usize,
    pub kernel_size: usize,
    /// Kernel size of the extrapolator along the feature axis.
    pub extrap_kernel: usize,
    pub tcn_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_obs: 8,
            t_pred: 12,
            d_e: 32,
            d_r: 16,
            d_h: 32,
            tcn_layers: 3,
            kernel_size: 3,
            extrap_kernel: 3,
            tcn_residual: true,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 9] =
        ["t_obs", "t_pred", "d_e", "d_r", "d_h", "tcn_layers", "kernel_size", "extrap_kernel", "tcn_residual"];

    /// Apply one setting; returns `Ok(false)` if the key is not a model key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        match key {
            "t_obs" => self.t_obs = num(key, v)?,
            "t_pred" => self.t_pred = num(key, v)?,
            "d_e" => self.d_e = num(key, v)?,
            "d_r" => self.d_r = num(key, v)?,
            "d_h" => self.d_h = num(key, v)?,
            "tcn_layers" => self.tcn_layers = num(key, v)?,
            "kernel_size" => self.kernel_size = num(key, v)?,
            "extrap_kernel" => self.extrap_kernel = num(key, v)?,
            "tcn_residual" => self.tcn_residual = flag(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_obs < 2 {
            return Err(invalid("t_obs", "must be >= 2"));
        }
        if self.t_pred < 1 {
            return Err(invalid("t_pred", "must be >= 1"));
        }
        for (k, v) in [("d_e", self.d_e), ("d_r", self.d_r), ("d_h", self.d_h), ("tcn_layers", self.tcn_layers)] {
            if v == 0 {
                return Err(invalid(k, "must be >= 1"));
            }
        }
        for (k, v) in [("kernel_size", self.kernel_size), ("extrap_kernel", self.extrap_kernel)] {
            if v % 2 == 0 {
                return Err(invalid(k, "must be odd"));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (_, k, v) in parse_pairs(text)? {
            if !cfg.set(&k, &v)? {
                return Err(ConfigError::UnknownKey(k));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "t_obs = {}", self.t_obs)?;
        writeln!(f, "t_pred = {}", self.t_pred)?;
        writeln!(f, "d_e = {}", self.d_e)?;
        writeln!(f, "d_r = {}", self.d_r)?;
        writeln!(f, "d_h = {}", self.d_h)?;
        writeln!(f, "tcn_layers = {}", self.tcn_layers)?;
        writeln!(f, "kernel_size = {}", self.kernel_size)?;
        writeln!(f, "extrap_kernel = {}", self.extrap_kernel)?;
        writeln!(f, "tcn_residual = {}", self.tcn_residual)
    }
}

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_interval: usize,
    /// Fraction of scenes held out for validation.
    pub val_fraction: f64,
    /// Multiplicative learning-rate decay per epoch; 1.0 keeps it constant.
    pub lr_decay: f64,
    pub window_stride: usize,
    /// Rescale the batch gradient to at most this L2 norm (0 disables).
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            checkpoint_interval: 0,
            val_fraction: 0.2,
            lr_decay: 1.0,
            window_stride: 1,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    /// Epoch count of the full published protocol; the default is the desk-scale 30.
    pub const FULL_PROTOCOL_EPOCHS: usize = 250;

    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        match key {
            "lr" => self.lr = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, v)?,
            "val_fraction" => self.val_fraction = num(key, v)?,
            "lr_decay" => self.lr_decay = num(key, v)?,
            "window_stride" => self.window_stride = num(key, v)?,
            "grad_clip" => self.grad_clip = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid("val_fraction", "must be in [0, 1)"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid("lr_decay", "must be in (0, 1]"));
        }
        if self.window_stride == 0 {
            return Err(invalid("window_stride", "must be >= 1"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(invalid("grad_clip", "must be finite and >= 0"));
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "checkpoint_interval = {}", self.checkpoint_interval)?;
        writeln!(f, "val_fraction = {}", self.val_fraction)?;
        writeln!(f, "lr_decay = {}", self.lr_decay)?;
        writeln!(f, "window_stride = {}", self.window_stride)?;
        writeln!(f, "grad_clip = {}", self.grad_clip)
    }
}

/// Model and training settings read from one file.
pub fn parse_config(text: &str) -> Result<(ModelConfig, TrainConfig), ConfigError> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    for (_, k, v) in parse_pairs(text)? {
        if !model.set(&k, &v)? && !train.set(&k, &v)? {
            return Err(ConfigError::UnknownKey(k));
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}
