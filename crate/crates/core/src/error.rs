use std::path::PathBuf;

use crate::mask::ElementId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("geometry mismatch: expected {expected}, found {found}")]
    GeometryMismatch { expected: String, found: String },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),

    #[error("coverage is undefined for an empty mask")]
    EmptyMask,

    #[error("duplicate element id {0} in mask set")]
    DuplicateElement(ElementId),

    #[error("masklet {0} has no pixels on any flow frame")]
    UnscorableMasklet(ElementId),

    #[error("cannot merge an empty masklet list")]
    EmptyMerge,

    #[error("layer count {count} exceeds capacity {capacity}")]
    CapacityExceeded { count: usize, capacity: usize },

    #[error("a clip must yield at least one layer")]
    NoLayers,

    #[error("no bundles to summarize")]
    NoBundles,

    #[error("layer masks overlap at frame {0}")]
    OverlappingLayers(usize),

    #[error("provider failure: {0}")]
    Provider(String),

    #[error("no propagated masklet covers prompt for element {element} at frame {frame} (best coverage {best:.3})")]
    PromptCoverage {
        element: ElementId,
        frame: usize,
        best: f64,
    },

    #[error("track sets do not match: {0}")]
    TrackMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("scene: {0}")]
    Scene(String),

    #[error("{format}: bad magic {found:?}")]
    BadMagic { format: &'static str, found: [u8; 4] },

    #[error("{format}: unsupported version {version}")]
    UnsupportedVersion { format: &'static str, version: u16 },

    #[error("{format}: length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch {
        format: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("{format}: corrupt payload: {detail}")]
    Corrupt { format: &'static str, detail: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Corrupt {
            format,
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag used in failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::GeometryMismatch { .. } => "geometry_mismatch",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::InvalidRle(_) => "invalid_rle",
            Error::EmptyMask => "empty_mask",
            Error::DuplicateElement(_) => "duplicate_element",
            Error::UnscorableMasklet(_) => "unscorable_masklet",
            Error::EmptyMerge => "empty_merge",
            Error::CapacityExceeded { .. } => "capacity_exceeded",
            Error::NoLayers => "no_layers",
            Error::NoBundles => "no_bundles",
            Error::OverlappingLayers(_) => "overlapping_layers",
            Error::Provider(_) => "provider",
            Error::PromptCoverage { .. } => "prompt_coverage",
            Error::TrackMismatch(_) => "track_mismatch",
            Error::Config(_) => "config",
            Error::Manifest(_) => "manifest",
            Error::Scene(_) => "scene",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Corrupt { .. } => "corrupt",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
