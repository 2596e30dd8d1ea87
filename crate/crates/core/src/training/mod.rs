//! Desk-scale optimisation of the invertible stack, plus the ablation and
//! attack-simulation harnesses built on top of it.

mod ablation;
mod adam;
mod attack;
mod data;
mod train;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Ops};
use crate::error::{config_err, Result};
use crate::inn::{ModelConfig, ScaleMode};
use crate::keying::DEFAULT_PATCH_SIZE;
use crate::pipeline::PreprocessMode;

pub use ablation::{default_variants, run_ablation, AblationReport, AblationRow, AblationVariant};
pub use adam::Adam;
pub use attack::{attack_sim, AttackConfig, AttackMode, AttackReport, KeyMode};
pub use data::{channel_stats, load_png_dir, random_crop, synthetic_images, Dataset};
pub use train::{evaluate, train, train_with_progress, EpochRecord, Evaluation, TrainHistory};

/// How pixel statistics feed the model's preprocessing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessChoice {
    Normalize,
    /// Mean and std measured on the training split.
    Standardize,
}

/// Gradient used through the container's 8-bit rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    /// Round forward, identity backward.
    StraightThrough,
    /// `round(x) + (x − round(x))³`: rounded value forward, a smooth
    /// surrogate slope backward.
    Cubic,
    /// No rounding during training.
    Off,
}

/// Everything `train` needs. Serialised as JSON for the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub epochs: usize,
    /// Optimiser steps per epoch.
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Epochs between learning-rate halvings; `0` never halves.
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub n_blocks: usize,
    pub hidden: usize,
    pub patch_size: usize,
    /// `1.0` disables decay.
    pub decay_rate: f64,
    pub preprocess: PreprocessChoice,
    pub scale: ScaleMode,
    pub rounding: RoundingMode,
    /// `false` trains the key-free variant.
    pub keyed: bool,
    /// Images held out for per-epoch validation.
    pub val_images: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 64×64 crops, 4 blocks of width 16, batch 4, 1000 steps.
    pub fn desk() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_s: 1.0,
            epochs: 10,
            steps_per_epoch: 100,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            lr_halving_period: 4,
            batch_size: 4,
            crop_size: 64,
            n_blocks: 4,
            hidden: 16,
            patch_size: DEFAULT_PATCH_SIZE,
            decay_rate: 0.6,
            preprocess: PreprocessChoice::Standardize,
            scale: ScaleMode::Sigmoid,
            rounding: RoundingMode::StraightThrough,
            keyed: true,
            val_images: 4,
            seed: 0,
        }
    }

    /// The full-size protocol: 256×256 crops, 16 blocks, 1600 epochs,
    /// learning rate 10^−4.5 halved every 200 epochs.
    pub fn full() -> Self {
        Self {
            epochs: 1600,
            lr: 10f64.powf(-4.5),
            lr_halving_period: 200,
            crop_size: 256,
            n_blocks: 16,
            hidden: 32,
            ..Self::desk()
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Learning rate in force during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_halving_period {
            0 => self.lr,
            p => self.lr * 0.5f64.powi((epoch / p) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(config_err!("{name} must be finite and non-negative, got {v}"));
        }
        if self.lr == 0.0 {
            return Err(config_err!("lr must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs, steps_per_epoch and batch_size must be positive"));
        }
        let m = 2 * self.patch_size;
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(m) {
            return Err(config_err!(
                "crop size {} must be a positive multiple of {m}",
                self.crop_size
            ));
        }
        self.model_config(PreprocessMode::Normalize).validate()
    }

    /// Model architecture implied by this config, with preprocessing
    /// constants supplied by the caller.
    pub fn model_config(&self, preprocess: PreprocessMode) -> ModelConfig {
        ModelConfig {
            n_blocks: self.n_blocks,
            decay_rate: self.decay_rate,
            patch_size: self.patch_size,
            image_channels: 3,
            hidden: self.hidden,
            preprocess,
            scale: self.scale,
            keyed: self.keyed,
        }
    }
}

/// `λ_c·Σ(x_c − x_h)² + λ_s·Σ(x_s − x_e)²`.
pub fn loss_total<T: Element, O: Ops<T>>(
    ops: &mut O,
    x_c: &O::Value,
    x_h: &O::Value,
    x_e: &O::Value,
    x_s: &O::Value,
    lambda_c: T,
    lambda_s: T,
) -> Result<O::Value> {
    let dc = ops.sub(x_c, x_h)?;
    let dc = ops.square(&dc)?;
    let lc = ops.sum(&dc)?;
    let ds = ops.sub(x_s, x_e)?;
    let ds = ops.square(&ds)?;
    let ls = ops.sum(&ds)?;
    let lc = ops.scale(&lc, lambda_c)?;
    let ls = ops.scale(&ls, lambda_s)?;
    ops.add(&lc, &ls)
}

/// Rounds half away from zero with an identity gradient.
pub fn round_st<T: Element, O: Ops<T>>(ops: &mut O, x: &O::Value) -> Result<O::Value> {
    ops.round_st(x)
}

impl RoundingMode {
    pub fn apply<T: Element, O: Ops<T>>(self, ops: &mut O, x: &O::Value) -> Result<O::Value> {
        match self {
            Self::StraightThrough => round_st(ops, x),
            Self::Off => Ok(x.clone()),
            Self::Cubic => {
                let r = ops.value(x).map(|v| v.round());
                let r = ops.constant(r);
                let d = ops.sub(x, &r)?;
                let d2 = ops.square(&d)?;
                let d3 = ops.mul(&d2, &d)?;
                ops.add(&r, &d3)
            }
        }
    }
}
