//! Experiment configuration: one JSON document drives the whole pipeline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encode::{GaborParams, DEFAULT_ANGULAR_RES, DEFAULT_RADIAL_RES};
use crate::error::{Error, Result};
use crate::eval::{EnrollmentPolicy, DEFAULT_BIN_WIDTH};
use crate::gate::GateConfig;
use crate::matcher::MatcherConfig;
use crate::metrics::ValidatorConfig;
use crate::synth::CohortConfig;

/// Polar grid and filter-bank settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub radial_res: u32,
    pub angular_res: u32,
    pub gabor: GaborParams,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            radial_res: DEFAULT_RADIAL_RES,
            angular_res: DEFAULT_ANGULAR_RES,
            gabor: GaborParams::default(),
        }
    }
}

/// Top-level experiment settings. Every field has a default, so `{}` is a
/// valid config; `master_seed` feeds every stage (there is no wall-clock
/// seeding anywhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub cohort: CohortConfig,
    pub validator: ValidatorConfig,
    pub encoder: EncoderConfig,
    pub matcher: MatcherConfig,
    pub pairing: EnrollmentPolicy,
    pub gate: GateConfig,
    /// Decision-environment histogram bin width.
    pub bin_width: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            cohort: CohortConfig::default(),
            validator: ValidatorConfig::synthetic_survey(),
            encoder: EncoderConfig::default(),
            matcher: MatcherConfig::default(),
            pairing: EnrollmentPolicy::default(),
            gate: GateConfig::default(),
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        if self.encoder.radial_res == 0
            || self.encoder.gabor.radial_pool == 0
            || !self.encoder.radial_res.is_multiple_of(self.encoder.gabor.radial_pool)
        {
            return Err(Error::Config(format!(
                "radial_res {} must be a positive multiple of radial_pool {}",
                self.encoder.radial_res, self.encoder.gabor.radial_pool
            )));
        }
        if 2 * self.matcher.max_shift >= self.encoder.angular_res {
            return Err(Error::Config("max_shift too large for angular_res".into()));
        }
        if !(self.bin_width > 0.0 && self.bin_width <= 1.0) {
            return Err(Error::Config("bin_width must be in (0, 1]".into()));
        }
        if !(self.gate.fmr_target > 0.0 && self.gate.fmr_target < 1.0) {
            return Err(Error::Config("fmr_target must be in (0, 1)".into()));
        }
        Ok(())
    }
}
