//! Training-time random control selection with layer dropout.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Dropped,
    Score,
    Trajectory,
    Sketch,
}

impl ControlKind {
    pub fn code(self) -> u8 {
        match self {
            ControlKind::Dropped => 0,
            ControlKind::Score => 1,
            ControlKind::Trajectory => 2,
            ControlKind::Sketch => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ControlKind::Dropped,
            1 => ControlKind::Score,
            2 => ControlKind::Trajectory,
            3 => ControlKind::Sketch,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::Dropped => "dropped",
            ControlKind::Score => "score",
            ControlKind::Trajectory => "trajectory",
            ControlKind::Sketch => "sketch",
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub p_drop: f64,
    pub p_score: f64,
    pub p_trajectory: f64,
    pub p_sketch: f64,
    /// Set by the caller; not part of the config document.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p_drop: 0.10,
            p_score: 0.20,
            p_trajectory: 0.40,
            p_sketch: 0.40,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_drop", self.p_drop),
            ("p_score", self.p_score),
            ("p_trajectory", self.p_trajectory),
            ("p_sketch", self.p_sketch),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        let total = self.p_score + self.p_trajectory + self.p_sketch;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("modality probabilities sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Which controls a layer can actually provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Availability {
    pub trajectory: bool,
    pub sketch: bool,
}

impl Availability {
    pub const ALL: Availability = Availability {
        trajectory: true,
        sketch: true,
    };
}

/// Draw record for one layer slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub kind: ControlKind,
    /// The modality drawn before any fallback for missing inputs.
    pub drawn: ControlKind,
    /// Uniform draws in order: dropout, then modality (absent when dropped or padded).
    pub draws: [Option<f64>; 2],
}

impl SlotAssignment {
    fn padded() -> Self {
        SlotAssignment {
            kind: ControlKind::Dropped,
            drawn: ControlKind::Dropped,
            draws: [None, None],
        }
    }

    pub fn degraded(&self) -> bool {
        self.kind != self.drawn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAssignment {
    pub seed: u64,
    pub clip_id: String,
    pub slots: Vec<SlotAssignment>,
}

impl ControlAssignment {
    pub fn kinds(&self) -> Vec<ControlKind> {
        self.slots.iter().map(|s| s.kind).collect()
    }
}

/// Independent RNG stream for `(seed, clip, slot, purpose)`.
pub fn stream_rng(seed: u64, clip_id: &str, slot: usize, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((clip_id.len() as u64).to_le_bytes());
    h.update(clip_id.as_bytes());
    h.update((slot as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn draw_slot(cfg: &SamplerConfig, clip_id: &str, slot: usize, avail: Availability) -> SlotAssignment {
    let mut rng = stream_rng(cfg.seed, clip_id, slot, "control");
    let u_drop: f64 = rng.random();
    if u_drop < cfg.p_drop {
        return SlotAssignment {
            kind: ControlKind::Dropped,
            drawn: ControlKind::Dropped,
            draws: [Some(u_drop), None],
        };
    }
    let u_kind: f64 = rng.random();
    let drawn = if u_kind < cfg.p_score {
        ControlKind::Score
    } else if u_kind < cfg.p_score + cfg.p_trajectory {
        ControlKind::Trajectory
    } else {
        ControlKind::Sketch
    };
    let mut kind = drawn;
    if kind == ControlKind::Sketch && !avail.sketch {
        kind = ControlKind::Trajectory;
    }
    if kind == ControlKind::Trajectory && !avail.trajectory {
        kind = ControlKind::Score;
    }
    SlotAssignment {
        kind,
        drawn,
        draws: [Some(u_drop), Some(u_kind)],
    }
}

/// Samples one control per valid layer; slots past `availability.len()` up
/// to `capacity` are padding and always dropped.
pub fn sample_controls_for(
    clip_id: &str,
    availability: &[Availability],
    capacity: usize,
    cfg: &SamplerConfig,
) -> Result<ControlAssignment> {
    cfg.validate()?;
    if availability.is_empty() {
        return Err(Error::NoLayers);
    }
    if availability.len() > capacity {
        return Err(Error::CapacityExceeded {
            count: availability.len(),
            capacity,
        });
    }
    let slots = (0..capacity)
        .map(|i| match availability.get(i) {
            Some(&avail) => draw_slot(cfg, clip_id, i, avail),
            None => SlotAssignment::padded(),
        })
        .collect();
    Ok(ControlAssignment {
        seed: cfg.seed,
        clip_id: clip_id.to_string(),
        slots,
    })
}

/// Samples controls for `layer_count` layers with every modality available.
pub fn sample_controls(layer_count: usize, cfg: &SamplerConfig) -> Result<ControlAssignment> {
    sample_controls_for("", &vec![Availability::ALL; layer_count], layer_count, cfg)
}
