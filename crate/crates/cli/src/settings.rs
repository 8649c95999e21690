//! Flat `key = value` settings shared by every command.
//!
//! Lines are `key = value` pairs; blank lines and `#` comments are ignored.
//! Later assignments win, and command-line overrides are applied last.

use std::str::FromStr;

use triplet_gcn::{SynthConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Fixed(f64),
    /// Maximizes sensitivity + specificity - 1 on the validation split.
    Youden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub threshold: ThresholdMode,
    pub bootstrap: usize,
    pub k: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.3,
            val_fraction: 0.15,
            threshold: ThresholdMode::Fixed(0.5),
            bootstrap: 1000,
            k: 5,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "n_patients",
    "n_numeric",
    "n_binary",
    "n_categorical",
    "n_categories",
    "prevalence",
    "signal_strength",
    "missing_rate",
    "noise_std",
    "learning_rate",
    "epochs",
    "gamma",
    "alpha",
    "alpha_balanced",
    "dropout_rate",
    "leaky_slope",
    "grad_clip",
    "early_stop_patience",
    "miss_weight",
    "hidden_dim",
    "mlp_hidden",
    "inductive",
    "literal_degrees",
    "stats_after_impute",
    "deterministic",
    "test_fraction",
    "val_fraction",
    "threshold",
    "bootstrap",
    "k",
];

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> CliResult<Option<T>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let (s, t) = (&mut self.synth, &mut self.train);
        match key {
            "seed" => {
                s.seed = parse(key, value)?;
                t.seed = s.seed;
            }
            "n_patients" => s.n_patients = parse(key, value)?,
            "n_numeric" => s.n_numeric = parse(key, value)?,
            "n_binary" => s.n_binary = parse(key, value)?,
            "n_categorical" => s.n_categorical = parse(key, value)?,
            "n_categories" => s.n_categories = parse(key, value)?,
            "prevalence" => s.prevalence = parse(key, value)?,
            "signal_strength" => s.signal_strength = parse(key, value)?,
            "missing_rate" => s.missing_rate = parse(key, value)?,
            "noise_std" => s.noise_std = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "alpha_balanced" => t.alpha_balanced = parse_bool(key, value)?,
            "dropout_rate" => t.dropout_rate = parse(key, value)?,
            "leaky_slope" => t.leaky_slope = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse_optional(key, value)?,
            "early_stop_patience" => t.early_stop_patience = parse(key, value)?,
            "miss_weight" => t.miss_weight = parse(key, value)?,
            "hidden_dim" => t.hidden_dim = parse(key, value)?,
            "mlp_hidden" => t.mlp_hidden = parse_optional(key, value)?,
            "inductive" => t.inductive = parse_bool(key, value)?,
            "literal_degrees" => t.literal_degrees = parse_bool(key, value)?,
            "stats_after_impute" => t.stats_after_impute = parse_bool(key, value)?,
            "deterministic" => t.deterministic = parse_bool(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "threshold" => {
                self.threshold = if value.eq_ignore_ascii_case("youden") {
                    ThresholdMode::Youden
                } else {
                    ThresholdMode::Fixed(parse(key, value)?)
                }
            }
            "bootstrap" => self.bootstrap = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown setting {key:?}; known settings: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Usage(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.train.validate()?;
        for (name, f) in [("test_fraction", self.test_fraction), ("val_fraction", self.val_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::Usage(format!("{name} {f} outside (0, 1)")));
            }
        }
        if let ThresholdMode::Fixed(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Usage(format!("threshold {t} outside [0, 1]")));
            }
        }
        if self.k == 0 {
            return Err(CliError::Usage("k must be positive".into()));
        }
        Ok(())
    }
}
