//! Flat key-value training configuration (a TOML subset: no tables).

use std::path::{Path, PathBuf};

use dekan_core::kan::SplineConfig;
use dekan_core::ModelConfig;
use dekan_data::AugmentSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub threshold: f64,
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    /// Parameter table for the residual encoder, loaded before training.
    pub import_weights: Option<PathBuf>,

    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub spline_lo: f64,
    pub spline_hi: f64,
    pub spline_intervals: usize,
    pub spline_order: usize,
    pub width_multiplier: f64,
    pub decoder_channels: Vec<usize>,
    pub out_channels: usize,
    pub model_seed: u64,

    pub brightness_limit: f64,
    pub contrast_limit: f64,
    pub blur_kernel_min: usize,
    pub blur_kernel_max: usize,
    pub hue_shift_limit: f64,
    pub sat_shift_limit: f64,
    pub val_shift_limit: f64,
    pub augment_probability: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_model(&ModelConfig::desk())
    }
}

impl TrainConfig {
    /// Optimiser and schedule defaults around the given architecture.
    pub fn with_model(model: &ModelConfig) -> Self {
        let aug = AugmentSpec::default();
        Self {
            batch_size: 32,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            min_lr: 1e-5,
            epochs: 200,
            early_stop_patience: 20,
            seed: 0,
            train_fraction: 0.8,
            threshold: 0.5,
            data_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            import_weights: None,
            image_height: model.image_height,
            image_width: model.image_width,
            in_channels: model.in_channels,
            patch_size: model.patch_size,
            embed_dim: model.embed_dim,
            spline_lo: model.spline.lo,
            spline_hi: model.spline.hi,
            spline_intervals: model.spline.intervals,
            spline_order: model.spline.order,
            width_multiplier: model.width_multiplier,
            decoder_channels: model.decoder_channels.clone(),
            out_channels: model.out_channels,
            model_seed: model.seed,
            brightness_limit: aug.brightness_limit,
            contrast_limit: aug.contrast_limit,
            blur_kernel_min: aug.blur_kernel_range.0,
            blur_kernel_max: aug.blur_kernel_range.1,
            hue_shift_limit: aug.hue_shift_limit,
            sat_shift_limit: aug.sat_shift_limit,
            val_shift_limit: aug.val_shift_limit,
            augment_probability: aug.probability,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_height: self.image_height,
            image_width: self.image_width,
            in_channels: self.in_channels,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            spline: SplineConfig {
                lo: self.spline_lo,
                hi: self.spline_hi,
                intervals: self.spline_intervals,
                order: self.spline_order,
            },
            width_multiplier: self.width_multiplier,
            decoder_channels: self.decoder_channels.clone(),
            out_channels: self.out_channels,
            seed: self.model_seed,
        }
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            brightness_limit: self.brightness_limit,
            contrast_limit: self.contrast_limit,
            blur_kernel_range: (self.blur_kernel_min, self.blur_kernel_max),
            hue_shift_limit: self.hue_shift_limit,
            sat_shift_limit: self.sat_shift_limit,
            val_shift_limit: self.val_shift_limit,
            probability: self.augment_probability,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.min_lr > 0.0 && self.lr > self.min_lr) {
            return bad(format!(
                "need lr > min_lr > 0, got lr {} and min_lr {}",
                self.lr, self.min_lr
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch_size, epochs and early_stop_patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad(format!(
                "momentum {} must be in [0, 1) and weight decay {} non-negative",
                self.momentum, self.weight_decay
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must be in (0, 1)", self.threshold));
        }
        self.model_config().validate()?;
        self.augment_spec().validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    /// Applies `key=value` overrides using the same syntax as the config file.
    pub fn apply_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(&self.to_toml()).map_err(|e| TrainError::Config(e.to_string()))?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
                .or_else(|_| toml::from_str(&format!("v = {:?}", value.trim())))
                .map_err(|e| TrainError::Config(format!("override `{item}`: {e}")))?;
            table.insert(key.to_string(), parsed["v"].clone());
        }
        Self::from_toml(&toml::to_string(&table).map_err(|e| TrainError::Config(e.to_string()))?)
    }
}
