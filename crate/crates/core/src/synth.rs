//! Procedural clips with exact ground truth: hard-edged shapes translating at
//! constant integer velocity over a flat background.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{seed_grid, SketchSequence, Track, TrackPoint, SKETCH_BLANK};
use crate::error::{Error, Result};
use crate::formats::{lafl, lamk, latk};
use crate::manifest::{frame_file_name, ClipEntry};
use crate::mask::{union_all, ClipGeometry, ElementId, MaskSet, PixelMask};
use crate::motion::FlowField;
use crate::segment::{FrameSegmenter, MaskletPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Shape {
    Rect { width: u32, height: u32 },
    /// Occupies a `(2r+1)` square box.
    Circle { radius: u32 },
}

impl Shape {
    fn box_size(self) -> (u32, u32) {
        match self {
            Shape::Rect { width, height } => (width, height),
            Shape::Circle { radius } => (2 * radius + 1, 2 * radius + 1),
        }
    }

    /// Whether box-local pixel `(dx, dy)` is inside the shape.
    fn contains(self, dx: u32, dy: u32) -> bool {
        match self {
            Shape::Rect { .. } => true,
            Shape::Circle { radius } => {
                let (a, b) = (dx as i64 - radius as i64, dy as i64 - radius as i64);
                a * a + b * b <= (radius as i64) * (radius as i64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [u8; 3],
    /// Top-left of the bounding box at frame 0.
    pub position: (i64, i64),
    /// Pixels per frame.
    pub velocity: (i64, i64),
    pub appears_at: usize,
    /// Number of vertical strips the object is segmented into.
    pub splits: u32,
}

impl ObjectSpec {
    fn origin(&self, t: usize) -> (i64, i64) {
        (
            self.position.0 + self.velocity.0 * t as i64,
            self.position.1 + self.velocity.1 * t as i64,
        )
    }

    pub fn speed(&self) -> f64 {
        let (vx, vy) = (self.velocity.0 as f64, self.velocity.1 as f64);
        (vx * vx + vy * vy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: ClipGeometry,
    /// Later objects occlude earlier ones.
    pub objects: Vec<ObjectSpec>,
    pub background: [u8; 3],
    pub grid_n: usize,
    pub seed: u64,
}

const BACKGROUND: ElementId = ElementId(0);
const COLORS: [[u8; 3]; 6] = [
    [220, 60, 50],
    [50, 160, 70],
    [40, 90, 210],
    [230, 190, 40],
    [150, 60, 180],
    [30, 180, 190],
];

impl SceneSpec {
    /// Background plus `layer_count - 1` moving objects with distinct speeds,
    /// each in its own horizontal band and split into 2..=6 strips. With
    /// `appearing`, the last object enters at frame 8.
    pub fn random(geometry: ClipGeometry, layer_count: usize, appearing: bool, seed: u64) -> Result<Self> {
        if !(2..=COLORS.len() + 1).contains(&layer_count) {
            return Err(Error::Scene(format!("layer count {layer_count} outside 2..={}", COLORS.len() + 1)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects_n = layer_count - 1;
        let (w, h) = (geometry.width as i64, geometry.height as i64);
        let span = geometry.frame_count as i64 - 1;
        let band = h / objects_n as i64;
        let margin = 2i64;
        let splits: Vec<u32> = (0..objects_n).map(|_| rng.random_range(2..=6)).collect();
        let min_w = 8 * *splits.iter().max().unwrap() as i64;

        // Even speeds stay more than 1 apart after a +-1 vertical component.
        let v_max = (w - 2 * margin - min_w) / span;
        let mut speeds: Vec<i64> = (1..).map(|k| 2 * k).take_while(|&s| s <= v_max).collect();
        if speeds.len() < objects_n || band < 24 {
            return Err(Error::Scene(format!(
                "{geometry} is too small for {objects_n} moving objects"
            )));
        }
        for i in (1..speeds.len()).rev() {
            speeds.swap(i, rng.random_range(0..=i));
        }

        let mut objects = Vec::with_capacity(objects_n);
        for (k, &j) in splits.iter().enumerate() {
            let appears_at = if appearing && k + 1 == objects_n && geometry.frame_count > 8 {
                8
            } else {
                0
            };
            let speed = speeds[k];
            let vy: i64 = if span + 16 <= band - 2 * margin { rng.random_range(-1..=1) } else { 0 };
            let vx = if rng.random_bool(0.5) { speed } else { -speed };
            let travel_x = speed * span;
            let room_y = band - 2 * margin - vy.abs() * span;
            let max_w = (w - 2 * margin - travel_x).min(8 * j as i64 + 60);
            let ow = rng.random_range(8 * j as i64..=max_w.max(8 * j as i64));
            let oh = rng.random_range(16.min(room_y)..=room_y.min(80));
            if oh < 16 {
                return Err(Error::Scene(format!("{geometry} is too small for {objects_n} moving objects")));
            }
            let mut shape = Shape::Rect {
                width: ow as u32,
                height: oh as u32,
            };
            if rng.random_bool(0.3) {
                let r = (ow.min(oh) - 1) / 2;
                let circle = Shape::Circle { radius: r as u32 };
                if min_strip_area(circle, j) >= 64 {
                    shape = circle;
                }
            }
            let (bw, bh) = shape.box_size();
            let (bw, bh) = (bw as i64, bh as i64);
            // Place so the whole path stays inside the band.
            let x0 = if vx > 0 { margin } else { w - margin - bw };
            let x_slack = w - 2 * margin - bw - travel_x;
            let x0 = x0 + if vx > 0 { 1 } else { -1 } * rng.random_range(0..=x_slack.max(0));
            let top = k as i64 * band + margin;
            let y_lo = if vy < 0 { top - vy * span } else { top };
            let y_hi = top + band - 2 * margin - bh - if vy > 0 { vy * span } else { 0 };
            let y0 = rng.random_range(y_lo..=y_hi.max(y_lo));
            objects.push(ObjectSpec {
                shape,
                color: COLORS[k],
                position: (x0 - vx * appears_at as i64, y0 - vy * appears_at as i64),
                velocity: (vx, vy),
                appears_at,
                splits: j,
            });
        }
        Ok(SceneSpec {
            geometry,
            objects,
            background: [245, 240, 230],
            grid_n: 60,
            seed,
        })
    }
}

fn min_strip_area(shape: Shape, splits: u32) -> u64 {
    let (bw, bh) = shape.box_size();
    let mut areas = vec![0u64; splits as usize];
    for dy in 0..bh {
        for dx in 0..bw {
            if shape.contains(dx, dy) {
                areas[(dx as u64 * splits as u64 / bw as u64) as usize] += 1;
            }
        }
    }
    areas.into_iter().min().unwrap_or(0)
}

/// One segmented element of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTruth {
    pub id: ElementId,
    /// Index into the spec's objects; `None` for the background.
    pub object: Option<usize>,
    pub first_appearance: usize,
    pub raw_score: f64,
}

/// Elements sharing one speed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueLayer {
    pub members: Vec<ElementId>,
    pub raw_score: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub geometry: ClipGeometry,
    /// Interleaved RGB, one buffer per frame.
    pub frames: Vec<Vec<u8>>,
    /// Visible pixels of every element, per frame.
    pub masks: Vec<MaskSet>,
    pub flow: FlowField,
    pub tracks: Vec<Track>,
    pub sketch: SketchSequence,
    pub elements: Vec<ElementTruth>,
    /// Ordered by smallest member id.
    pub layers: Vec<TrueLayer>,
}

impl GroundTruth {
    pub fn segmenter(&self) -> FrameSegmenter {
        FrameSegmenter::new(self.masks.iter().cloned())
    }

    pub fn pool(&self) -> Result<MaskletPool> {
        MaskletPool::from_frame_sets(self.geometry, &self.masks)
    }

    /// Per-frame union of the given elements' masks.
    pub fn union_masks(&self, members: &[ElementId]) -> Vec<PixelMask> {
        let size = self.geometry.frame_size();
        self.masks
            .iter()
            .map(|set| {
                union_all(size, members.iter().filter_map(|id| set.get(*id))).expect("masks share the frame size")
            })
            .collect()
    }

    /// Writes frames, masks, flow, tracks and sketches under `root/clip_id`
    /// and returns the manifest entry with paths relative to `root`.
    pub fn write_clip(&self, root: &Path, clip_id: &str, fps: f64) -> Result<ClipEntry> {
        let g = self.geometry;
        let rel = Path::new(clip_id);
        let dir = root.join(rel);
        let frames_dir = dir.join("frames");
        let sketch_dir = dir.join("sketch");
        for d in [&frames_dir, &sketch_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for (t, rgb) in self.frames.iter().enumerate() {
            let path = frames_dir.join(frame_file_name(t));
            image::RgbImage::from_raw(g.width, g.height, rgb.clone())
                .expect("frame buffer sized from geometry")
                .save(&path)
                .map_err(|source| Error::Image { path: path.clone(), source })?;
            let path = sketch_dir.join(frame_file_name(t));
            image::GrayImage::from_raw(g.width, g.height, self.sketch.frame(t).to_vec())
                .expect("sketch buffer sized from geometry")
                .save(&path)
                .map_err(|source| Error::Image { path: path.clone(), source })?;
        }
        lamk::write(
            &dir.join("masks.lamk"),
            &lamk::MaskFile {
                size: g.frame_size(),
                sets: self.masks.clone(),
            },
        )?;
        lafl::write(&dir.join("flow.lafl"), &self.flow)?;
        latk::write(
            &dir.join("tracks.latk"),
            &latk::TrackFile {
                frame_count: g.frame_count,
                tracks: self.tracks.clone(),
            },
        )?;
        Ok(ClipEntry {
            id: clip_id.to_string(),
            frame_count: g.frame_count,
            width: g.width,
            height: g.height,
            fps,
            frames_dir: rel.join("frames"),
            segmentation: rel.join("masks.lamk"),
            propagation: rel.join("masks.lamk"),
            flow: rel.join("flow.lafl"),
            tracks: rel.join("tracks.latk"),
            sketch_dir: Some(rel.join("sketch")),
        })
    }
}

/// Renders the scene and derives every ground-truth signal from it.
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruth> {
    let g = spec.geometry;
    let (w, h, f) = (g.width as i64, g.height as i64, g.frame_count);
    let n = g.pixel_count();
    if spec.grid_n == 0 {
        return Err(Error::Scene("grid_n must be at least 1".into()));
    }

    // Element ids: background 0, then each object's strips in order.
    let mut first_id = Vec::with_capacity(spec.objects.len());
    let mut next = 1u32;
    for (k, o) in spec.objects.iter().enumerate() {
        let (bw, bh) = o.shape.box_size();
        if o.splits == 0 || bw == 0 || bh == 0 {
            return Err(Error::Scene(format!("object {k} has an empty shape or zero splits")));
        }
        if o.appears_at >= f {
            return Err(Error::Scene(format!("object {k} appears at {} of {f} frames", o.appears_at)));
        }
        if min_strip_area(o.shape, o.splits) == 0 {
            return Err(Error::Scene(format!("object {k} has an empty strip")));
        }
        for t in o.appears_at..f {
            let (x, y) = o.origin(t);
            if x < 0 || y < 0 || x + bw as i64 > w || y + bh as i64 > h {
                return Err(Error::Scene(format!("object {k} leaves the frame at frame {t}")));
            }
        }
        first_id.push(next);
        next += o.splits;
    }

    // Per-frame element labels and owning object (0 = background, k + 1 = object k).
    let mut labels = vec![0u32; f * n];
    let mut owners = vec![0u32; f * n];
    for t in 0..f {
        let lab = &mut labels[t * n..(t + 1) * n];
        let own = &mut owners[t * n..(t + 1) * n];
        for (k, o) in spec.objects.iter().enumerate() {
            if t < o.appears_at {
                continue;
            }
            let (bw, bh) = o.shape.box_size();
            let (x0, y0) = o.origin(t);
            for dy in 0..bh {
                for dx in 0..bw {
                    if !o.shape.contains(dx, dy) {
                        continue;
                    }
                    let p = (y0 as usize + dy as usize) * w as usize + x0 as usize + dx as usize;
                    lab[p] = first_id[k] + (dx as u64 * o.splits as u64 / bw as u64) as u32;
                    own[p] = k as u32 + 1;
                }
            }
        }
    }

    let frames = (0..f)
        .map(|t| {
            let own = &owners[t * n..(t + 1) * n];
            own.iter()
                .flat_map(|&o| if o == 0 { spec.background } else { spec.objects[o as usize - 1].color })
                .collect()
        })
        .collect();

    let size = g.frame_size();
    let element_count = next as usize;
    let mut masks = Vec::with_capacity(f);
    for t in 0..f {
        let lab = &labels[t * n..(t + 1) * n];
        let mut spans: Vec<Vec<(u32, u32)>> = vec![Vec::new(); element_count];
        let mut start = 0usize;
        for p in 1..=n {
            if p == n || lab[p] != lab[start] {
                spans[lab[start] as usize].push((start as u32, (p - start) as u32));
                start = p;
            }
        }
        let entries = spans
            .into_iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(id, s)| Ok((ElementId(id as u32), PixelMask::from_spans(size, s)?)))
            .collect::<Result<Vec<_>>>()?;
        masks.push(MaskSet::new(t, size, entries)?);
    }

    let mut flow = FlowField::zeros(g);
    for t in 0..f - 1 {
        let own = &owners[t * n..(t + 1) * n];
        let plane = flow.plane_mut(t);
        for (p, &o) in own.iter().enumerate() {
            if o != 0 {
                let v = spec.objects[o as usize - 1].velocity;
                plane[2 * p] = v.0 as f32;
                plane[2 * p + 1] = v.1 as f32;
            }
        }
    }

    let owner_at = |t: usize, x: f32, y: f32| -> Option<u32> {
        let (px, py) = (x.floor() as i64, y.floor() as i64);
        (px >= 0 && py >= 0 && px < w && py < h).then(|| owners[t * n + py as usize * w as usize + px as usize])
    };
    let tracks = seed_grid(g, spec.grid_n)
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let owner = owner_at(0, x, y).expect("grid points lie inside the frame");
            let v = if owner == 0 { (0, 0) } else { spec.objects[owner as usize - 1].velocity };
            let points = (0..f)
                .map(|t| {
                    let px = x + (v.0 * t as i64) as f32;
                    let py = y + (v.1 * t as i64) as f32;
                    TrackPoint {
                        x: px,
                        y: py,
                        visible: owner_at(t, px, py) == Some(owner),
                    }
                })
                .collect();
            Track { id: i as u32, points }
        })
        .collect();

    let mut sketch = vec![SKETCH_BLANK; f * n];
    for t in 0..f {
        let own = &owners[t * n..(t + 1) * n];
        let out = &mut sketch[t * n..(t + 1) * n];
        let (wu, hu) = (w as usize, h as usize);
        for y in 0..hu {
            for x in 0..wu {
                let o = own[y * wu + x];
                if o == 0 {
                    continue;
                }
                let edge = x == 0
                    || y == 0
                    || x + 1 == wu
                    || y + 1 == hu
                    || own[y * wu + x - 1] != o
                    || own[y * wu + x + 1] != o
                    || own[(y - 1) * wu + x] != o
                    || own[(y + 1) * wu + x] != o;
                if edge {
                    out[y * wu + x] = 0;
                }
            }
        }
    }

    let mut elements = vec![ElementTruth {
        id: BACKGROUND,
        object: None,
        first_appearance: 0,
        raw_score: 0.0,
    }];
    for (k, o) in spec.objects.iter().enumerate() {
        for p in 0..o.splits {
            elements.push(ElementTruth {
                id: ElementId(first_id[k] + p),
                object: Some(k),
                first_appearance: o.appears_at,
                raw_score: o.speed(),
            });
        }
    }
    let mut layers: Vec<TrueLayer> = Vec::new();
    for e in &elements {
        match layers.iter_mut().find(|l| l.raw_score == e.raw_score) {
            Some(l) => l.members.push(e.id),
            None => layers.push(TrueLayer {
                members: vec![e.id],
                raw_score: e.raw_score,
            }),
        }
    }

    Ok(GroundTruth {
        geometry: g,
        frames,
        masks,
        flow,
        tracks,
        sketch: SketchSequence::new(g, sketch)?,
        elements,
        layers,
    })
}
