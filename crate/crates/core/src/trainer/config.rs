use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{graph::SoftHistogram, LossWeights, DEFAULT_BINS, DEFAULT_EPSILON};
use crate::metrics::MetricParams;
use crate::networks::ArchConfig;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    #[serde(rename = "l1_weight_1")]
    L1Weight1,
    NoKl,
    NoAttention,
}

impl Ablation {
    pub const VARIANTS: [Ablation; 3] = [Ablation::L1Weight1, Ablation::NoKl, Ablation::NoAttention];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::L1Weight1 => "l1_weight_1",
            Ablation::NoKl => "no_kl",
            Ablation::NoAttention => "no_attention",
        }
    }

    /// The base configuration with this variant switched on.
    pub fn apply(self, base: &TrainingConfig) -> TrainingConfig {
        let mut c = base.clone();
        c.ablation = self;
        match self {
            Ablation::L1Weight1 => c.weights.lambda_l1 = 1.0,
            Ablation::NoAttention => c.arch.use_attention = false,
            Ablation::None | Ablation::NoKl => {}
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Ablation::None),
            "l1_weight_1" => Ok(Ablation::L1Weight1),
            "no_kl" => Ok(Ablation::NoKl),
            "no_attention" => Ok(Ablation::NoAttention),
            other => Err(Error::Validation(format!(
                "unknown ablation variant `{other}` (expected l1_weight_1, no_kl or no_attention)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlConfig {
    pub bins: usize,
    pub epsilon: f64,
    /// Gaussian kernel width of the soft histogram, in bin widths.
    pub soft_sigma: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
            soft_sigma: 0.5,
        }
    }
}

impl KlConfig {
    pub fn soft(&self) -> SoftHistogram {
        SoftHistogram {
            bins: self.bins,
            sigma_fraction: self.soft_sigma,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// `(height, width)` every pair is resized to.
    pub resolution: (usize, usize),
    pub seed: u64,
    pub ablation: Ablation,
    pub optimizer: AdamConfig,
    pub arch: ArchConfig,
    pub kl: KlConfig,
    pub metrics: MetricParams,
    pub precision: Precision,
    /// Fraction of the dataset used for training.
    pub split_ratio: f64,
    /// Stops early after this many optimisation steps.
    pub max_steps: Option<u64>,
    /// Caps the number of validation pairs scored each epoch.
    pub val_max_items: Option<usize>,
    pub checkpoint_every: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: 4,
            weights: LossWeights::default(),
            resolution: (256, 256),
            seed: 0,
            ablation: Ablation::None,
            optimizer: AdamConfig::default(),
            arch: ArchConfig::default(),
            kl: KlConfig::default(),
            metrics: MetricParams::default(),
            precision: Precision::F32,
            split_ratio: 0.8,
            max_steps: None,
            val_max_items: None,
            checkpoint_every: None,
            out_dir: None,
            data_dir: None,
        }
    }
}

impl TrainingConfig {
    /// Desk-scale settings: 64×64 inputs, the reduced-width architecture and
    /// a larger step so 200 updates get somewhere.
    pub fn smoke() -> Self {
        Self {
            learning_rate: 5e-4,
            resolution: (64, 64),
            arch: ArchConfig::small(),
            max_steps: Some(200),
            val_max_items: Some(8),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        if self.kl.bins < 2 || !(self.kl.epsilon > 0.0) || !(self.kl.soft_sigma > 0.0) {
            return Err(Error::Config("kl needs bins >= 2, epsilon > 0 and soft_sigma > 0".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer.validate()?;
        let arch = self.effective_arch();
        arch.validate()?;
        arch.check_resolution(self.resolution)
    }

    /// Loss weights after the ablation flag is applied.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        match self.ablation {
            Ablation::NoKl => w.lambda_kl = 0.0,
            Ablation::L1Weight1 => w.lambda_l1 = 1.0,
            Ablation::None | Ablation::NoAttention => {}
        }
        w
    }

    pub fn effective_arch(&self) -> ArchConfig {
        let mut a = self.arch.clone();
        if self.ablation == Ablation::NoAttention {
            a.use_attention = false;
        }
        a
    }

    /// Seed of the batch order, decoupled from the initialisation seed.
    pub fn shuffle_seed(&self) -> u64 {
        self.seed ^ 0xB47C_0DE5
    }
}
