//! TOML configuration shared by the CLI commands. Unknown keys are rejected;
//! the generated template lists every default explicitly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::MaskKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub recon: ReconSection,
    pub mask: MaskSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSection::default(),
            train: TrainSection::default(),
            recon: ReconSection::default(),
            mask: MaskSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_filters: usize,
    pub kernel_size: usize,
    pub n_components: usize,
    pub interval_min: f64,
    pub interval_max: f64,
    /// spectral_max | spectral_mean | learned_mlp | learned_softplus
    pub conditioning: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_filters: 20,
            kernel_size: 5,
            n_components: 125,
            interval_min: -0.5,
            interval_max: 0.5,
            conditioning: "spectral_max".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr_kernels: f64,
    pub lr_weights: f64,
    pub lr_conditioning: f64,
    pub ema_momentum: f64,
    pub t_horizon: f64,
    /// 0 disables checkpoints
    pub checkpoint_interval: usize,
    pub loss_log_interval: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            batch_size: 8,
            patch_size: 64,
            lr_kernels: 5e-3,
            lr_weights: 2e-2,
            lr_conditioning: 1e-3,
            ema_momentum: 0.999,
            t_horizon: 1.0,
            checkpoint_interval: 0,
            loss_log_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub schedule_power: f64,
    pub t_horizon: f64,
    pub n_steps: usize,
    pub corrector_steps: usize,
    pub lambda: f64,
    pub mu: f64,
    pub step_ratio: f64,
    pub start_fraction: f64,
    pub repeats: usize,
}

impl Default for ReconSection {
    fn default() -> Self {
        Self {
            zeta_min: 0.001,
            zeta_max: 10.0,
            schedule_power: 5.0,
            t_horizon: 1.0,
            n_steps: 1000,
            corrector_steps: 1,
            lambda: 1.0,
            mu: 10.0,
            step_ratio: 0.075,
            start_fraction: 0.2,
            repeats: 25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub kind: MaskKind,
    pub acceleration: f64,
    pub acl_fraction: f64,
    pub rotated: bool,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            kind: MaskKind::Cartesian,
            acceleration: 4.0,
            acl_fraction: 0.08,
            rotated: false,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("config parse: {e}")))
    }

    /// TOML template with all defaults spelled out.
    pub fn template() -> String {
        toml::to_string_pretty(&Config::default()).expect("default config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
