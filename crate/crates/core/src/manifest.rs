//! Clip manifest (TOML): one `[[clip]]` table per clip. Relative paths
//! resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::ClipGeometry;

pub const MIN_FRAMES: usize = 16;
pub const MAX_FRAMES: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Directory of `00000.png`, `00001.png`, ... RGB frames.
    pub frames_dir: PathBuf,
    /// `LAMK` per-frame segmentation.
    pub segmentation: PathBuf,
    /// `LAMK` masklet pool for propagation.
    pub propagation: PathBuf,
    /// `LAFL` flow.
    pub flow: PathBuf,
    /// `LATK` tracks.
    pub tracks: PathBuf,
    /// Directory of grayscale sketch frames named like `frames_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch_dir: Option<PathBuf>,
}

impl ClipEntry {
    pub fn geometry(&self) -> Result<ClipGeometry> {
        ClipGeometry::new(self.width, self.height, self.frame_count)
            .map_err(|e| Error::Manifest(format!("clip {}: {e}", self.id)))
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Manifest(format!("clip {:?}: {msg}", self.id)));
        if self.id.is_empty()
            || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            || self.id.starts_with('.')
        {
            return bad("id must be nonempty and use only [A-Za-z0-9_.-]".into());
        }
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&self.frame_count) {
            return bad(format!(
                "frame_count {} outside [{MIN_FRAMES}, {MAX_FRAMES}]",
                self.frame_count
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        self.geometry().map(|_| ())
    }
}

/// Name of frame `t` inside a frame or sketch directory.
pub fn frame_file_name(t: usize) -> String {
    format!("{t:05}.png")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "clip", default)]
    pub clips: Vec<ClipEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, clips: Vec<ClipEntry>) -> Result<Self> {
        let m = Manifest {
            clips,
            root: root.into(),
        };
        m.check()?;
        Ok(m)
    }

    /// Parses a manifest whose relative paths resolve against `root`.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.root = root.into();
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::formats::write_atomic(path, self.to_toml().as_bytes())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    pub fn clip(&self, id: &str) -> Option<&ClipEntry> {
        self.clips.iter().find(|c| c.id == id)
    }

    fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for c in &self.clips {
            c.check()?;
            if !ids.insert(c.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate clip id {:?}", c.id)));
            }
        }
        Ok(())
    }
}
