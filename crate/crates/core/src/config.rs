//! Pipeline configuration document (TOML). Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::Mode;
use crate::error::{Error, Result};
use crate::mask::SubtractParams;
use crate::motion::MergeConfig;
use crate::sampler::SamplerConfig;
use crate::segment::CurateParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackSelection {
    /// Uniform `k` in `[1, max_tracks_per_layer]` tracks per layer.
    #[default]
    Random,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub key_interval: usize,
    pub tau_new: f64,
    pub min_area: u64,
    pub capacity: usize,
    pub eta_s: f64,
    pub eta: f64,
    pub s_max: f64,
    pub grid_n: usize,
    pub min_overlap: f64,
    pub sigma_heat: f64,
    pub max_tracks_per_layer: usize,
    pub track_selection: TrackSelection,
    /// Working size; every clip must already be at this size.
    pub resolution: Resolution,
    pub mode: Mode,
    pub seed: u64,
    pub sampler: SamplerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            key_interval: 4,
            tau_new: 0.5,
            min_area: 64,
            capacity: 4,
            eta_s: 1.0,
            eta: 0.1,
            s_max: 30.0,
            grid_n: 60,
            min_overlap: 0.8,
            sigma_heat: 5.0,
            max_tracks_per_layer: 8,
            track_selection: TrackSelection::Random,
            resolution: Resolution {
                width: 512,
                height: 320,
            },
            mode: Mode::I2v,
            seed: 0,
            sampler: SamplerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.key_interval == 0 {
            return fail("key_interval must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau_new) {
            return fail(format!("tau_new must be in [0, 1], got {}", self.tau_new));
        }
        if !(0.0..1.0).contains(&self.min_overlap) {
            return fail(format!("min_overlap must be in [0, 1), got {}", self.min_overlap));
        }
        if self.grid_n == 0 {
            return fail("grid_n must be at least 1".into());
        }
        if !(self.sigma_heat > 0.0 && self.sigma_heat.is_finite()) {
            return fail(format!("sigma_heat must be finite and > 0, got {}", self.sigma_heat));
        }
        if self.max_tracks_per_layer == 0 {
            return fail("max_tracks_per_layer must be at least 1".into());
        }
        if self.resolution.width == 0 || self.resolution.height == 0 {
            return fail("resolution must be nonzero".into());
        }
        self.merge().validate()?;
        self.sampler().validate()
    }

    pub fn curate(&self) -> CurateParams {
        CurateParams {
            key_interval: self.key_interval,
            subtract: SubtractParams {
                tau_new: self.tau_new,
                min_area: self.min_area,
            },
        }
    }

    pub fn merge(&self) -> MergeConfig {
        MergeConfig {
            capacity: self.capacity,
            eta_s: self.eta_s,
            eta: self.eta,
            s_max: self.s_max,
        }
    }

    /// Sampler settings with the pipeline seed applied.
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.sampler
        }
    }
}
