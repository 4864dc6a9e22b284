//! Model and training configuration with a flat `key=value` text format.

use crate::error::{Error, Result};
use crate::features::dataset::Segmentation;
use crate::features::mfcc::{MfccConfig, WindowKind};

/// Everything a run needs besides data paths and the seed. `feature_dim` is
/// the single source of truth for the MFCC coefficient count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub overlap_ratio: f64,
    pub segmentation: Segmentation,
    pub mfcc: MfccConfig,
    pub classes: Vec<String>,
    pub vocabulary: Vec<String>,
    pub use_stop_gradient: bool,
    pub use_align_loss: bool,
    pub use_cross_attention: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub target_train_wa: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            embed_dim: 300,
            hidden_dim: 128,
            feature_dim: 40,
            heads: 4,
            dropout: 0.3,
            alpha: 0.1,
            overlap_ratio: 0.1,
            segmentation: Segmentation::Aligned,
            mfcc: MfccConfig::default(),
            classes: Vec::new(),
            vocabulary: Vec::new(),
            use_stop_gradient: true,
            use_align_loss: true,
            use_cross_attention: true,
            batch_size: 64,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            max_epochs: 200,
            patience: 10,
            val_fraction: 0.1,
            target_train_wa: None,
        }
    }
}

fn window_name(window: WindowKind) -> &'static str {
    match window {
        WindowKind::Hamming => "hamming",
        WindowKind::Rectangular => "rectangular",
    }
}

fn parse_window(text: &str) -> Result<WindowKind> {
    match text {
        "hamming" => Ok(WindowKind::Hamming),
        "rectangular" => Ok(WindowKind::Rectangular),
        other => Err(Error::Config(format!(
            "unknown window '{other}' (expected hamming or rectangular)"
        ))),
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.heads == 0 || !(2 * self.hidden_dim).is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "head count {} must divide the hidden width {}",
                self.heads,
                2 * self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if !(0.0..0.5).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!(
                "overlap ratio must lie in [0, 0.5), got {}",
                self.overlap_ratio
            )));
        }
        if self.feature_dim != self.mfcc.coefficient_count {
            return Err(Error::Config(format!(
                "feature_dim {} disagrees with the MFCC coefficient count {}",
                self.feature_dim, self.mfcc.coefficient_count
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 0.5], got {}",
                self.val_fraction
            )));
        }
        self.mfcc.validate()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Width of the concatenated input to the fused prediction head.
    pub fn fused_width(&self) -> usize {
        if self.use_cross_attention {
            8 * self.hidden_dim
        } else {
            4 * self.hidden_dim
        }
    }

    /// The loss weight actually applied; disabling the alignment loss forces
    /// it to zero, which also collapses the inference fusion to the main head.
    pub fn effective_alpha(&self) -> f64 {
        if self.use_align_loss {
            self.alpha
        } else {
            0.0
        }
    }

    /// Applies one `key=value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |key: &str, value: &str| {
            Error::Config(format!("cannot parse '{value}' for key '{key}'"))
        };
        match key {
            "embed_dim" => self.embed_dim = value.parse().map_err(|_| bad(key, value))?,
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad(key, value))?,
            "feature_dim" => {
                self.feature_dim = value.parse().map_err(|_| bad(key, value))?;
                self.mfcc.coefficient_count = self.feature_dim;
            }
            "heads" => self.heads = value.parse().map_err(|_| bad(key, value))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad(key, value))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad(key, value))?,
            "overlap_ratio" => self.overlap_ratio = value.parse().map_err(|_| bad(key, value))?,
            "segmentation" => self.segmentation = Segmentation::parse(value)?,
            "classes" => self.classes = value.split_whitespace().map(String::from).collect(),
            "vocabulary" => self.vocabulary = value.split_whitespace().map(String::from).collect(),
            "use_stop_gradient" => {
                self.use_stop_gradient = value.parse().map_err(|_| bad(key, value))?
            }
            "use_align_loss" => self.use_align_loss = value.parse().map_err(|_| bad(key, value))?,
            "use_cross_attention" => {
                self.use_cross_attention = value.parse().map_err(|_| bad(key, value))?
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key, value))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad(key, value))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad(key, value))?,
            "patience" => self.patience = value.parse().map_err(|_| bad(key, value))?,
            "val_fraction" => self.val_fraction = value.parse().map_err(|_| bad(key, value))?,
            "target_train_wa" => {
                self.target_train_wa = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value))?)
                }
            }
            "mfcc.frame_ms" => self.mfcc.frame_ms = value.parse().map_err(|_| bad(key, value))?,
            "mfcc.hop_ms" => self.mfcc.hop_ms = value.parse().map_err(|_| bad(key, value))?,
            "mfcc.window" => self.mfcc.window = parse_window(value)?,
            "mfcc.mel_filters" => {
                self.mfcc.mel_filter_count = value.parse().map_err(|_| bad(key, value))?
            }
            "mfcc.fft_size" => self.mfcc.fft_size = value.parse().map_err(|_| bad(key, value))?,
            "mfcc.pre_emphasis" => {
                self.mfcc.pre_emphasis = value.parse().map_err(|_| bad(key, value))?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a flat key=value document on top of this configuration. Blank
    /// lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: number + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<ModelConfig> {
        let mut config = ModelConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    /// Serializes every field; `parse` of the output reproduces the value.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut line = |key: &str, value: String| {
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        };
        line("embed_dim", self.embed_dim.to_string());
        line("hidden_dim", self.hidden_dim.to_string());
        line("feature_dim", self.feature_dim.to_string());
        line("heads", self.heads.to_string());
        line("dropout", self.dropout.to_string());
        line("alpha", self.alpha.to_string());
        line("overlap_ratio", self.overlap_ratio.to_string());
        line("segmentation", self.segmentation.as_str().to_string());
        line("classes", self.classes.join(" "));
        line("vocabulary", self.vocabulary.join(" "));
        line("use_stop_gradient", self.use_stop_gradient.to_string());
        line("use_align_loss", self.use_align_loss.to_string());
        line("use_cross_attention", self.use_cross_attention.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("clip_norm", self.clip_norm.to_string());
        line("max_epochs", self.max_epochs.to_string());
        line("patience", self.patience.to_string());
        line("val_fraction", self.val_fraction.to_string());
        line(
            "target_train_wa",
            self.target_train_wa
                .map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        line("mfcc.frame_ms", self.mfcc.frame_ms.to_string());
        line("mfcc.hop_ms", self.mfcc.hop_ms.to_string());
        line("mfcc.window", window_name(self.mfcc.window).to_string());
        line("mfcc.mel_filters", self.mfcc.mel_filter_count.to_string());
        line("mfcc.fft_size", self.mfcc.fft_size.to_string());
        line("mfcc.pre_emphasis", self.mfcc.pre_emphasis.to_string());
        out
    }
}
