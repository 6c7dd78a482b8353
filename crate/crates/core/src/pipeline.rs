//! Per-clip orchestration and the batch runner.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{motion_based_assignment, LayerStack, Mode, ReferenceFrame, References};
use crate::config::{PipelineConfig, TrackSelection};
use crate::control::{
    encode_motion_score, filter_tracks, mask_sketch, rasterize_trajectories, subsample_tracks, SketchSequence,
    Track, TrackFilter,
};
use crate::error::{Error, Result};
use crate::formats::latb::{self, Array, Bundle};
use crate::formats::{lafl, lamk, latk, write_atomic};
use crate::manifest::{frame_file_name, ClipEntry, Manifest};
use crate::mask::{ClipGeometry, ElementId, MaskSet};
use crate::motion::{hierarchical_merge, raw_motion_score, FlowField, Layer, MotionClass};
use crate::sampler::{sample_controls_for, stream_rng, Availability, ControlAssignment, ControlKind};
use crate::segment::{curate_masklets, Curation, FrameSegmenter, Masklet, MaskletPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Curate,
    Score,
    Merge,
    Assign,
    Tracks,
    Sample,
    Encode,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("stage is a string"))
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Machine-readable record written as `<clip>.failure.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub clip_id: String,
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSummary {
    pub clip_id: String,
    pub masklets: usize,
    pub unscorable: Vec<ElementId>,
    pub layers: usize,
    pub static_layers: usize,
    pub dynamic_layers: usize,
    pub raw_scores: Vec<f64>,
    pub tracks_total: usize,
    pub tracks_kept: usize,
    pub tracks_dropped: usize,
    pub tracks_unassigned: usize,
    pub controls: Vec<ControlKind>,
}

/// Checks the clip against the working resolution.
pub fn clip_geometry(entry: &ClipEntry, cfg: &PipelineConfig) -> Result<ClipGeometry> {
    let g = entry.geometry()?;
    let r = cfg.resolution;
    if (g.width, g.height) != (r.width, r.height) {
        return Err(Error::GeometryMismatch {
            expected: format!("{}x{} working resolution", r.width, r.height),
            found: format!("clip {} at {}x{}", entry.id, g.width, g.height),
        });
    }
    Ok(g)
}

fn read_masks(path: &Path, g: ClipGeometry) -> Result<Vec<MaskSet>> {
    let file = lamk::read(path)?;
    g.frame_size().check(file.size)?;
    if let Some(set) = file.sets.iter().find(|s| s.frame_index() >= g.frame_count) {
        return Err(Error::GeometryMismatch {
            expected: g.to_string(),
            found: format!("{}: mask set for frame {}", path.display(), set.frame_index()),
        });
    }
    Ok(file.sets)
}

pub fn load_providers(
    manifest: &Manifest,
    entry: &ClipEntry,
    g: ClipGeometry,
) -> Result<(FrameSegmenter, MaskletPool)> {
    let seg = read_masks(&manifest.resolve(&entry.segmentation), g)?;
    let pool = if entry.propagation == entry.segmentation {
        MaskletPool::from_frame_sets(g, &seg)?
    } else {
        MaskletPool::from_frame_sets(g, &read_masks(&manifest.resolve(&entry.propagation), g)?)?
    };
    Ok((FrameSegmenter::new(seg), pool))
}

pub fn load_flow(manifest: &Manifest, entry: &ClipEntry, g: ClipGeometry) -> Result<FlowField> {
    let flow = lafl::read(&manifest.resolve(&entry.flow))?;
    g.check(&flow.geometry())?;
    Ok(flow)
}

pub fn load_tracks(manifest: &Manifest, entry: &ClipEntry, g: ClipGeometry) -> Result<Vec<Track>> {
    let path = manifest.resolve(&entry.tracks);
    let file = latk::read(&path)?;
    if file.frame_count != g.frame_count {
        return Err(Error::TrackMismatch(format!(
            "{}: {} frames, clip has {}",
            path.display(),
            file.frame_count,
            g.frame_count
        )));
    }
    Ok(file.tracks)
}

fn check_size(path: &Path, g: ClipGeometry, width: u32, height: u32) -> Result<()> {
    if (width, height) != (g.width, g.height) {
        return Err(Error::GeometryMismatch {
            expected: g.to_string(),
            found: format!("{} is {width}x{height}", path.display()),
        });
    }
    Ok(())
}

pub fn load_frame(manifest: &Manifest, entry: &ClipEntry, g: ClipGeometry, t: usize) -> Result<ReferenceFrame> {
    let path = manifest.resolve(&entry.frames_dir).join(frame_file_name(t));
    let img = image::open(&path)
        .map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?
        .into_rgb8();
    check_size(&path, g, img.width(), img.height())?;
    ReferenceFrame::new(g.frame_size(), img.into_raw())
}

pub fn load_sketch(manifest: &Manifest, entry: &ClipEntry, g: ClipGeometry) -> Result<Option<SketchSequence>> {
    let Some(dir) = &entry.sketch_dir else {
        return Ok(None);
    };
    let dir = manifest.resolve(dir);
    let mut frames = Vec::with_capacity(g.frame_count * g.pixel_count());
    for t in 0..g.frame_count {
        let path = dir.join(frame_file_name(t));
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .into_luma8();
        check_size(&path, g, img.width(), img.height())?;
        frames.extend_from_slice(img.as_raw());
    }
    SketchSequence::new(g, frames).map(Some)
}

/// Checks that every referenced file exists, decodes, and agrees on geometry.
pub fn validate_clip(manifest: &Manifest, entry: &ClipEntry, cfg: &PipelineConfig) -> Result<()> {
    let g = clip_geometry(entry, cfg)?;
    let frames = manifest.resolve(&entry.frames_dir);
    for t in 0..g.frame_count {
        let path = frames.join(frame_file_name(t));
        let (w, h) = image::image_dimensions(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        check_size(&path, g, w, h)?;
    }
    if let Some(dir) = &entry.sketch_dir {
        let dir = manifest.resolve(dir);
        for t in 0..g.frame_count {
            let path = dir.join(frame_file_name(t));
            let (w, h) = image::image_dimensions(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            check_size(&path, g, w, h)?;
        }
    }
    load_providers(manifest, entry, g)?;
    load_flow(manifest, entry, g)?;
    load_tracks(manifest, entry, g)?;
    Ok(())
}

pub fn curate_clip(manifest: &Manifest, entry: &ClipEntry, cfg: &PipelineConfig) -> Result<Curation> {
    let g = clip_geometry(entry, cfg)?;
    let (seg, pool) = load_providers(manifest, entry, g)?;
    curate_masklets(g, &seg, &pool, cfg.curate())
}

/// Masklets as a `LAMK` file, one set per frame.
pub fn masklet_file(g: ClipGeometry, masklets: &[Masklet]) -> Result<lamk::MaskFile> {
    let size = g.frame_size();
    let sets = (0..g.frame_count)
        .map(|t| {
            MaskSet::new(
                t,
                size,
                masklets
                    .iter()
                    .filter(|m| !m.mask(t).is_empty())
                    .map(|m| (m.element_id(), m.mask(t).clone()))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    Ok(lamk::MaskFile { size, sets })
}

#[derive(Debug, Clone)]
pub struct Scored {
    pub masklets: Vec<Masklet>,
    pub raw_scores: Vec<f64>,
    /// Masklets with no pixels on any flow frame; left out of merging.
    pub unscorable: Vec<ElementId>,
}

pub fn score_masklets(masklets: Vec<Masklet>, flow: &FlowField) -> Result<Scored> {
    let mut out = Scored {
        masklets: Vec::with_capacity(masklets.len()),
        raw_scores: Vec::with_capacity(masklets.len()),
        unscorable: Vec::new(),
    };
    for m in masklets {
        match raw_motion_score(&m, flow) {
            Ok(s) => {
                out.raw_scores.push(s);
                out.masklets.push(m);
            }
            Err(Error::UnscorableMasklet(id)) => out.unscorable.push(id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn merge_clip(scored: &Scored, cfg: &PipelineConfig) -> Result<Vec<Layer>> {
    hierarchical_merge(&scored.masklets, &scored.raw_scores, &cfg.merge())
}

pub fn assign_clip(
    manifest: &Manifest,
    entry: &ClipEntry,
    g: ClipGeometry,
    layers: &[Layer],
    cfg: &PipelineConfig,
) -> Result<LayerStack> {
    let refs = References {
        first: load_frame(manifest, entry, g, 0)?,
        last: match cfg.mode {
            Mode::I2v => None,
            Mode::Interpolation => Some(load_frame(manifest, entry, g, g.frame_count - 1)?),
        },
    };
    motion_based_assignment(g, layers, &refs, cfg.capacity, cfg.mode)
}

/// Tracks selected for one slot's trajectory map.
pub fn select_tracks(clip_id: &str, slot: usize, tracks: &[Track], cfg: &PipelineConfig) -> Vec<Track> {
    match cfg.track_selection {
        TrackSelection::All => tracks.to_vec(),
        TrackSelection::Random => {
            let mut rng = stream_rng(cfg.seed, clip_id, slot, "tracks");
            subsample_tracks(tracks, cfg.max_tracks_per_layer, &mut rng)
        }
    }
}

fn class_code(c: Option<MotionClass>) -> u8 {
    match c {
        Some(MotionClass::Static) => 0,
        Some(MotionClass::Dynamic) => 1,
        None => 255,
    }
}

fn join_ids(ids: &[ElementId]) -> String {
    let parts: Vec<String> = ids.iter().map(|id| id.0.to_string()).collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(",")
    }
}

/// Every stage for one clip, producing the bundle in memory.
pub fn process_clip(
    manifest: &Manifest,
    entry: &ClipEntry,
    cfg: &PipelineConfig,
) -> std::result::Result<(Bundle, ClipSummary), StageError> {
    let g = clip_geometry(entry, cfg).at(Stage::Load)?;
    let (seg, pool) = load_providers(manifest, entry, g).at(Stage::Load)?;
    let flow = load_flow(manifest, entry, g).at(Stage::Load)?;
    let tracks = load_tracks(manifest, entry, g).at(Stage::Load)?;
    let sketch = load_sketch(manifest, entry, g).at(Stage::Load)?;

    let curation = curate_masklets(g, &seg, &pool, cfg.curate()).at(Stage::Curate)?;
    drop((seg, pool));
    let all_masklets = curation.masklets.clone();
    let scored = score_masklets(curation.masklets, &flow).at(Stage::Score)?;
    drop(flow);
    let layers = merge_clip(&scored, cfg).at(Stage::Merge)?;
    let stack = assign_clip(manifest, entry, g, &layers, cfg).at(Stage::Assign)?;

    let filter: TrackFilter = filter_tracks(g, &tracks, &all_masklets, cfg.min_overlap).at(Stage::Tracks)?;
    let per_layer = filter.by_layer(&layers);

    let availability: Vec<Availability> = per_layer
        .iter()
        .map(|t| Availability {
            trajectory: !t.is_empty(),
            sketch: sketch.is_some(),
        })
        .collect();
    let assignment: ControlAssignment =
        sample_controls_for(&entry.id, &availability, cfg.capacity, &cfg.sampler()).at(Stage::Sample)?;

    let n_slots = cfg.capacity;
    let (f, h, w) = (g.frame_count, g.height as usize, g.width as usize);
    let mut controls = Vec::new();
    for (slot, a) in assignment.slots.iter().enumerate() {
        match a.kind {
            ControlKind::Dropped => {}
            ControlKind::Score => {
                let map = encode_motion_score(&stack, slot).at(Stage::Encode)?;
                controls.push(Array::f32(&format!("control.{slot}.score_map"), &map.shape(), map.data()));
            }
            ControlKind::Trajectory => {
                let chosen = select_tracks(&entry.id, slot, &per_layer[slot], cfg);
                let map = rasterize_trajectories(g, &chosen, cfg.sigma_heat).at(Stage::Encode)?;
                let ids: Vec<f64> = chosen.iter().map(|t| t.id as f64).collect();
                controls.push(Array::f32(&format!("control.{slot}.trajectory_map"), &map.shape(), map.data()));
                controls.push(Array::f64(&format!("control.{slot}.track_ids"), &[ids.len()], &ids));
            }
            ControlKind::Sketch => {
                let source = sketch.as_ref().expect("sketch assigned only when available");
                let masked = mask_sketch(source, &layers[slot].masks).at(Stage::Encode)?;
                controls.push(Array::u8(&format!("control.{slot}.sketch"), &[f, 1, h, w], masked.into_frames()));
            }
        }
    }

    let validity: Vec<u8> = stack.validity().iter().map(|&v| v as u8).collect();
    let conditioning: Vec<u8> = (0..n_slots)
        .map(|i| (stack.validity()[i] && assignment.slots[i].kind != ControlKind::Dropped) as u8)
        .collect();
    let classes: Vec<u8> = stack.classes().iter().map(|&c| class_code(c)).collect();
    let raw = stack.raw_scores().to_vec();
    let normalized: Vec<f32> = stack.normalized_scores().iter().map(|&s| s as f32).collect();
    let kinds: Vec<u8> = assignment.slots.iter().map(|s| s.kind.code()).collect();
    let draws: Vec<f64> = assignment
        .slots
        .iter()
        .flat_map(|s| s.draws.map(|d| d.unwrap_or(f64::NAN)))
        .collect();
    let (mask_shape, region_shape) = (stack.mask_shape(), stack.region_shape());

    let summary = ClipSummary {
        clip_id: entry.id.clone(),
        masklets: all_masklets.len(),
        unscorable: scored.unscorable.clone(),
        layers: layers.len(),
        static_layers: layers.iter().filter(|l| l.class == MotionClass::Static).count(),
        dynamic_layers: layers.iter().filter(|l| l.class == MotionClass::Dynamic).count(),
        raw_scores: layers.iter().map(|l| l.score.raw).collect(),
        tracks_total: tracks.len(),
        tracks_kept: filter.kept_count(),
        tracks_dropped: filter.dropped,
        tracks_unassigned: filter.unassigned,
        controls: assignment.kinds(),
    };

    let mut meta = vec![
        ("frame_count".to_string(), f.to_string()),
        ("width".into(), w.to_string()),
        ("height".into(), h.to_string()),
        ("fps".into(), entry.fps.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("mode".into(), serde_json::to_value(cfg.mode).expect("mode").as_str().unwrap().to_string()),
        ("capacity".into(), n_slots.to_string()),
        ("masklets".into(), summary.masklets.to_string()),
        ("unscorable".into(), join_ids(&summary.unscorable)),
        ("layers".into(), summary.layers.to_string()),
        ("tracks_total".into(), summary.tracks_total.to_string()),
        ("tracks_kept".into(), summary.tracks_kept.to_string()),
        ("tracks_dropped".into(), summary.tracks_dropped.to_string()),
        ("tracks_unassigned".into(), summary.tracks_unassigned.to_string()),
    ];
    for step in &curation.steps {
        meta.push((format!("key.{}.new", step.frame), join_ids(&step.new_elements)));
    }
    for (i, layer) in layers.iter().enumerate() {
        meta.push((format!("layer.{i}.members"), join_ids(&layer.members)));
    }
    meta.push((
        "assignment".into(),
        serde_json::to_string(&assignment).expect("assignment serializes"),
    ));

    let (masks, regions) = stack.into_tensors();
    let mut arrays = vec![
        Array::u8("layer_masks", &mask_shape, masks),
        Array::u8("layer_regions", &region_shape, regions),
        Array::u8("validity", &[n_slots], validity),
        Array::u8("conditioning_validity", &[n_slots], conditioning),
        Array::u8("motion_class", &[n_slots], classes),
        Array::f64("raw_scores", &[n_slots], &raw),
        Array::f32("scores", &[n_slots], &normalized),
        Array::u8("control_kind", &[n_slots], kinds),
        Array::f64("control_draws", &[n_slots, 2], &draws),
    ];
    arrays.extend(controls);

    Ok((
        Bundle {
            clip_id: entry.id.clone(),
            meta,
            arrays,
        },
        summary,
    ))
}

pub fn bundle_path(out: &Path, clip_id: &str) -> PathBuf {
    out.join(format!("{clip_id}.latb"))
}

pub fn failure_path(out: &Path, clip_id: &str) -> PathBuf {
    out.join(format!("{clip_id}.failure.json"))
}

fn remove_stale(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

/// Processes one clip and writes either its bundle or its failure record.
pub fn run_clip(
    manifest: &Manifest,
    entry: &ClipEntry,
    cfg: &PipelineConfig,
    out: &Path,
) -> std::result::Result<ClipSummary, FailureRecord> {
    let result = process_clip(manifest, entry, cfg).and_then(|(bundle, summary)| {
        latb::write(&bundle_path(out, &entry.id), &bundle).at(Stage::Write)?;
        remove_stale(&failure_path(out, &entry.id)).at(Stage::Write)?;
        Ok(summary)
    });
    result.map_err(|e| {
        let record = FailureRecord {
            clip_id: entry.id.clone(),
            stage: e.stage,
            kind: e.error.kind().to_string(),
            message: e.error.to_string(),
        };
        // A failed clip leaves no bundle behind; the record itself is best effort.
        let _ = remove_stale(&bundle_path(out, &entry.id));
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        let _ = write_atomic(&failure_path(out, &entry.id), &json);
        record
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub succeeded: Vec<ClipSummary>,
    pub failed: Vec<FailureRecord>,
}

impl BatchReport {
    pub fn all_ok(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Runs every clip on a pool of `jobs` workers; results keep manifest order.
pub fn run_batch(manifest: &Manifest, cfg: &PipelineConfig, out: &Path, jobs: usize) -> Result<BatchReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        manifest
            .clips
            .par_iter()
            .map(|entry| run_clip(manifest, entry, cfg, out))
            .collect()
    });
    let mut report = BatchReport {
        succeeded: Vec::new(),
        failed: Vec::new(),
    };
    for r in results {
        match r {
            Ok(s) => report.succeeded.push(s),
            Err(f) => report.failed.push(f),
        }
    }
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_atomic(&out.join("run_report.json"), &json)?;
    Ok(report)
}
