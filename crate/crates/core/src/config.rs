//! Run configuration for the command-line pipeline.
//!
//! Every field has a default, so an empty file (or no file) reproduces the
//! reference setup: 10,000 samples, the 4-128-256-256-128-4 network, Adam at
//! 5e-4, batch 64, patience 20, the 50-point ħ sweep at t = 5 and the three
//! phase-space grids.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SamplingRanges;
use crate::error::{Error, Result};
use crate::experiments::{logspace, PhaseSpaceSpec, SweepSpec};
use crate::mlp::ArchitectureSpec;
use crate::oracle::{GridSpec, OscillatorConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub n: usize,
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            n: 10_000,
            seed: 42,
            split_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden_dims: Vec<usize>,
    pub batchnorm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub init_seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let a = ArchitectureSpec::default();
        Self {
            hidden_dims: a.hidden_dims,
            batchnorm: a.batchnorm,
            bn_momentum: a.bn_momentum,
            bn_epsilon: a.bn_epsilon,
            init_seed: 42,
        }
    }
}

impl ModelSettings {
    pub fn architecture(&self) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim: 4,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: 4,
            batchnorm: self.batchnorm,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x0: f64,
    pub hbar_log10_min: f64,
    pub hbar_log10_max: f64,
    pub points: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            x0: 1.0,
            p0: 0.0,
            sigma_x0: 1.0,
            hbar_log10_min: -6.0,
            hbar_log10_max: 0.0,
            points: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSpaceSettings {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x0: f64,
    pub hbar_values: Vec<f64>,
    pub range_min: f64,
    pub range_max: f64,
    pub points: usize,
    pub contour_levels: usize,
}

impl Default for PhaseSpaceSettings {
    fn default() -> Self {
        Self {
            x0: 1.0,
            p0: 0.0,
            sigma_x0: 1.0,
            hbar_values: vec![1.0, 0.1, 0.01],
            range_min: -10.0,
            range_max: 10.0,
            points: 100,
            contour_levels: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub oscillator: OscillatorConfig,
    pub sampling: SamplingRanges,
    pub dataset: DatasetSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub sweep: SweepSettings,
    pub phasespace: PhaseSpaceSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            oscillator: OscillatorConfig::default(),
            sampling: SamplingRanges::default(),
            dataset: DatasetSettings::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            sweep: SweepSettings::default(),
            phasespace: PhaseSpaceSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.oscillator.validate()?;
        self.sampling.validate()?;
        if self.dataset.n < 10 {
            return Err(Error::invalid("dataset.n must be >= 10"));
        }
        self.model.architecture().validate()?;
        self.train.validate()?;
        self.sweep_spec().validate()?;
        self.phase_space_spec().validate()?;
        Ok(())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let s = &self.sweep;
        SweepSpec {
            x0: s.x0,
            p0: s.p0,
            sigma_x0: s.sigma_x0,
            hbar_values: logspace(s.hbar_log10_min, s.hbar_log10_max, s.points),
            oscillator: self.oscillator,
        }
    }

    pub fn phase_space_spec(&self) -> PhaseSpaceSpec {
        let s = &self.phasespace;
        PhaseSpaceSpec {
            x0: s.x0,
            p0: s.p0,
            sigma_x0: s.sigma_x0,
            hbar_values: s.hbar_values.clone(),
            grid: GridSpec::square(s.range_min, s.range_max, s.points),
            contour_levels: s.contour_levels,
        }
    }
}
