use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::Activation;

/// How the first layer turns the input image into four residual planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpfMode {
    /// Fixed directional difference kernels.
    Untrainable,
    /// Difference kernels used as initialisation, then trained.
    Trainable,
    /// Gaussian-initialised 3×3 kernels, trained.
    Random,
    /// The input plane copied into four channels.
    NoHighPass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    On,
    Off,
    /// Expansion conv followed by an extra halving pool (seven groups).
    OnPlusPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastPool {
    Gap,
    MaxS2,
    AvgS2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScale {
    /// Pixels divided by 255.
    Unit,
    /// Pixels as 0..=255.
    Raw,
}

impl InputScale {
    pub fn factor(self) -> f64 {
        match self {
            InputScale::Unit => 1.0 / 255.0,
            InputScale::Raw => 1.0,
        }
    }
}

/// Every structural choice of the network, including the ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub input_size: usize,
    pub num_classes: usize,
    pub base_width: usize,
    pub hpf_mode: HpfMode,
    pub expansion: Expansion,
    pub last_pool: LastPool,
    pub activation: Activation,
    pub all_avg_pool: bool,
    pub input_scale: InputScale,
    /// Standard deviation of the Gaussian weight initialisation.
    pub init_std: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            input_size: 256,
            num_classes: 12,
            base_width: 32,
            hpf_mode: HpfMode::Untrainable,
            expansion: Expansion::On,
            last_pool: LastPool::Gap,
            activation: Activation::Tanh,
            all_avg_pool: false,
            input_scale: InputScale::Unit,
            init_std: 0.01,
        }
    }
}

/// Number of conv/pool groups after the expansion layer.
pub const GROUPS: usize = 6;

/// Channels produced by the high-pass bank.
pub const RESIDUAL_CHANNELS: usize = 4;

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::invalid(
                "architecture",
                format!("input size {} is not a positive multiple of 32", self.input_size),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(
                "architecture",
                format!("need at least 2 classes, got {}", self.num_classes),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::invalid("architecture", "base width must be positive"));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::invalid(
                "architecture",
                format!("init std must be positive, got {}", self.init_std),
            ));
        }
        Ok(())
    }

    /// Channels entering the first of the six groups.
    pub fn group_input_channels(&self) -> usize {
        match self.expansion {
            Expansion::Off => RESIDUAL_CHANNELS,
            Expansion::On | Expansion::OnPlusPool => self.base_width,
        }
    }

    /// Channels leaving the last group.
    pub fn final_channels(&self) -> usize {
        self.group_input_channels() << GROUPS
    }
}
