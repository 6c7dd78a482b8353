//! Layer decomposition and control-signal preparation for animation clips.
//!
//! Clips arrive as frames plus externally produced segmentation masks, dense
//! flow and point tracks. [`pipeline::process_clip`] turns one clip into a
//! capacity-padded stack of motion-grouped layers with per-layer controls.

pub mod assign;
pub mod config;
pub mod control;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod mask;
pub mod motion;
pub mod pipeline;
pub mod report;
pub mod sampler;
pub mod segment;
pub mod synth;

pub use assign::{LayerStack, Mode};
pub use config::PipelineConfig;
pub use control::{Track, TrackPoint};
pub use error::{Error, Result};
pub use manifest::{ClipEntry, Manifest};
pub use mask::{ClipGeometry, ElementId, FrameSize, MaskSet, PixelMask};
pub use motion::{FlowField, Layer, MotionClass};
pub use sampler::{ControlKind, SamplerConfig};
pub use segment::Masklet;
