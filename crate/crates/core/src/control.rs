//! Layer-level control encodings: motion-score maps, hybrid trajectory maps
//! (Gaussian heatmap plus normalized offsets) and layer-masked sketches.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::Rng;

use crate::assign::LayerStack;
use crate::error::{Error, Result};
use crate::mask::{ClipGeometry, ElementId, PixelMask};
use crate::motion::Layer;
use crate::segment::Masklet;

/// Sketch background value: a blank page.
pub const SKETCH_BLANK: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub x: f32,
    pub y: f32,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub points: Vec<TrackPoint>,
}

impl Track {
    /// Pixel containing `(x, y)`, if inside the frame.
    fn pixel_at(&self, t: usize, geometry: ClipGeometry) -> Option<(u32, u32)> {
        let p = self.points[t];
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return None;
        }
        let (px, py) = (p.x.floor() as u64, p.y.floor() as u64);
        (px < geometry.width as u64 && py < geometry.height as u64).then_some((px as u32, py as u32))
    }
}

/// `n x n` points at the cell centres of a uniform grid, row by row.
pub fn seed_grid(geometry: ClipGeometry, n: usize) -> Vec<(f32, f32)> {
    assert!(n >= 1, "grid needs at least one point per axis");
    let (w, h) = (geometry.width as f64, geometry.height as f64);
    let mut points = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = (i as f64 + 0.5) * w / n as f64;
            let y = (j as f64 + 0.5) * h / n as f64;
            points.push((x as f32, y as f32));
        }
    }
    points
}

/// Result of assigning tracks to masklets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackFilter {
    /// Retained tracks per masklet, sorted by track id.
    pub kept: BTreeMap<ElementId, Vec<Track>>,
    /// Assigned at frame 0 but not inside their masklet often enough.
    pub dropped: usize,
    /// Frame-0 point outside every masklet.
    pub unassigned: usize,
}

impl TrackFilter {
    pub fn kept_count(&self) -> usize {
        self.kept.values().map(Vec::len).sum()
    }

    /// Groups retained tracks by the layer holding their masklet.
    pub fn by_layer(&self, layers: &[Layer]) -> Vec<Vec<Track>> {
        layers
            .iter()
            .map(|layer| {
                let mut tracks: Vec<Track> = layer
                    .members
                    .iter()
                    .filter_map(|id| self.kept.get(id))
                    .flatten()
                    .cloned()
                    .collect();
                tracks.sort_by_key(|t| t.id);
                tracks
            })
            .collect()
    }
}

/// Assigns each track to the masklet under its frame-0 point and keeps it
/// iff the fraction of frames where it is visible inside that masklet
/// exceeds `min_overlap`.
pub fn filter_tracks(
    geometry: ClipGeometry,
    tracks: &[Track],
    masklets: &[Masklet],
    min_overlap: f64,
) -> Result<TrackFilter> {
    let f = geometry.frame_count;
    for m in masklets {
        if m.frame_count() != f {
            return Err(Error::GeometryMismatch {
                expected: geometry.to_string(),
                found: format!("masklet {} with {} frames", m.element_id(), m.frame_count()),
            });
        }
    }
    for t in tracks {
        if t.points.len() != f {
            return Err(Error::TrackMismatch(format!(
                "track {} has {} points, clip has {f} frames",
                t.id,
                t.points.len()
            )));
        }
    }
    let n = geometry.pixel_count();
    let mut labels = vec![u32::MAX; f * n];
    for t in 0..f {
        let plane = &mut labels[t * n..(t + 1) * n];
        for (i, m) in masklets.iter().enumerate() {
            m.mask(t).paint(plane, i as u32);
        }
    }
    let label_at = |t: usize, track: &Track| {
        track
            .pixel_at(t, geometry)
            .map(|(x, y)| labels[t * n + y as usize * geometry.width as usize + x as usize])
            .filter(|&l| l != u32::MAX)
    };

    let mut out = TrackFilter::default();
    let mut sorted: Vec<&Track> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.id);
    for track in sorted {
        let Some(label) = label_at(0, track) else {
            out.unassigned += 1;
            continue;
        };
        let inside = (0..f)
            .filter(|&t| track.points[t].visible && label_at(t, track) == Some(label))
            .count();
        if inside as f64 / f as f64 > min_overlap {
            out.kept
                .entry(masklets[label as usize].element_id())
                .or_default()
                .push(track.clone());
        } else {
            out.dropped += 1;
        }
    }
    Ok(out)
}

/// Draws `k` uniform in `[1, min(k_max, len)]` tracks without replacement.
pub fn subsample_tracks<R: Rng + ?Sized>(tracks: &[Track], k_max: usize, rng: &mut R) -> Vec<Track> {
    if tracks.is_empty() || k_max == 0 {
        return Vec::new();
    }
    let upper = k_max.min(tracks.len());
    let k = rng.random_range(1..=upper);
    let mut picked = sample(rng, tracks.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| tracks[i].clone()).collect()
}

/// `F x 3 x H x W`: heatmap, x offset, y offset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMap {
    geometry: ClipGeometry,
    data: Vec<f32>,
}

impl TrajectoryMap {
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        let g = self.geometry;
        [g.frame_count, 3, g.height as usize, g.width as usize]
    }

    pub fn get(&self, frame: usize, channel: usize, x: u32, y: u32) -> f32 {
        let g = self.geometry;
        let n = g.pixel_count();
        self.data[(frame * 3 + channel) * n + y as usize * g.width as usize + x as usize]
    }
}

/// Rasterizes tracks into a hybrid trajectory map.
///
/// The heatmap holds the strongest Gaussian blob (truncated at `3 sigma`)
/// centred on each visible point's pixel. Pixels under a blob carry the
/// nearest track's displacement to the next frame, normalized by frame
/// width and height; offsets are zero on the last frame and whenever either
/// endpoint is invisible.
pub fn rasterize_trajectories(geometry: ClipGeometry, tracks: &[Track], sigma: f64) -> Result<TrajectoryMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("heatmap sigma must be finite and > 0, got {sigma}")));
    }
    let f = geometry.frame_count;
    for t in tracks {
        if t.points.len() != f {
            return Err(Error::TrackMismatch(format!(
                "track {} has {} points, clip has {f} frames",
                t.id,
                t.points.len()
            )));
        }
    }
    let mut sorted: Vec<&Track> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.id);

    let (w, h) = (geometry.width as i64, geometry.height as i64);
    let n = geometry.pixel_count();
    let reach = 3.0 * sigma;
    let radius = reach.floor() as i64;
    let reach2 = reach * reach;
    let two_sigma2 = 2.0 * sigma * sigma;
    let mut data = vec![0f32; f * 3 * n];
    let mut best = vec![(i64::MAX, usize::MAX); n];

    for t in 0..f {
        best.fill((i64::MAX, usize::MAX));
        for (k, track) in sorted.iter().enumerate() {
            if !track.points[t].visible {
                continue;
            }
            let Some((cx, cy)) = track.pixel_at(t, geometry) else {
                continue;
            };
            let (cx, cy) = (cx as i64, cy as i64);
            for dy in -radius..=radius {
                let y = cy + dy;
                if y < 0 || y >= h {
                    continue;
                }
                for dx in -radius..=radius {
                    let x = cx + dx;
                    let d2 = dx * dx + dy * dy;
                    if x < 0 || x >= w || d2 as f64 > reach2 {
                        continue;
                    }
                    let slot = &mut best[(y * w + x) as usize];
                    if d2 < slot.0 {
                        *slot = (d2, k);
                    }
                }
            }
        }
        let offsets: Vec<(f32, f32)> = sorted
            .iter()
            .map(|track| {
                if t + 1 >= f || !track.points[t].visible || !track.points[t + 1].visible {
                    return (0.0, 0.0);
                }
                let (a, b) = (track.points[t], track.points[t + 1]);
                (
                    ((b.x as f64 - a.x as f64) / geometry.width as f64) as f32,
                    ((b.y as f64 - a.y as f64) / geometry.height as f64) as f32,
                )
            })
            .collect();
        let frame = &mut data[t * 3 * n..(t + 1) * 3 * n];
        let (heat, rest) = frame.split_at_mut(n);
        let (off_x, off_y) = rest.split_at_mut(n);
        for (p, &(d2, k)) in best.iter().enumerate() {
            if k == usize::MAX {
                continue;
            }
            heat[p] = (-(d2 as f64) / two_sigma2).exp() as f32;
            off_x[p] = offsets[k].0;
            off_y[p] = offsets[k].1;
        }
    }
    Ok(TrajectoryMap { geometry, data })
}

/// `F x 2 x H x W`: layer mask and the normalized score broadcast over it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    geometry: ClipGeometry,
    data: Vec<f32>,
}

impl ScoreMap {
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        let g = self.geometry;
        [g.frame_count, 2, g.height as usize, g.width as usize]
    }

    pub fn channel(&self, frame: usize, channel: usize) -> &[f32] {
        let n = self.geometry.pixel_count();
        &self.data[(frame * 2 + channel) * n..(frame * 2 + channel + 1) * n]
    }
}

/// Broadcasts `normalized` over the support of an `F x H x W` 0/1 mask tensor.
pub fn score_map(geometry: ClipGeometry, masks: &[u8], normalized: f64) -> Result<ScoreMap> {
    let n = geometry.pixel_count();
    if masks.len() != geometry.frame_count * n {
        return Err(Error::GeometryMismatch {
            expected: geometry.to_string(),
            found: format!("{} mask bytes", masks.len()),
        });
    }
    let s = normalized as f32;
    let mut data = vec![0f32; geometry.frame_count * 2 * n];
    for (t, frame) in masks.chunks_exact(n).enumerate() {
        let out = &mut data[t * 2 * n..(t + 1) * 2 * n];
        let (ch0, ch1) = out.split_at_mut(n);
        for (p, &m) in frame.iter().enumerate() {
            if m != 0 {
                ch0[p] = 1.0;
                ch1[p] = s;
            }
        }
    }
    Ok(ScoreMap { geometry, data })
}

/// Score map for one slot of a layer stack.
pub fn encode_motion_score(stack: &LayerStack, slot: usize) -> Result<ScoreMap> {
    let g = stack.geometry();
    let per = g.frame_count * g.pixel_count();
    score_map(g, &stack.masks()[slot * per..(slot + 1) * per], stack.normalized_scores()[slot])
}

/// `F` grayscale line-drawing frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchSequence {
    geometry: ClipGeometry,
    frames: Vec<u8>,
}

impl SketchSequence {
    pub fn new(geometry: ClipGeometry, frames: Vec<u8>) -> Result<Self> {
        if frames.len() != geometry.frame_count * geometry.pixel_count() {
            return Err(Error::GeometryMismatch {
                expected: geometry.to_string(),
                found: format!("{} sketch bytes", frames.len()),
            });
        }
        Ok(SketchSequence { geometry, frames })
    }

    pub fn geometry(&self) -> ClipGeometry {
        self.geometry
    }

    pub fn frames(&self) -> &[u8] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<u8> {
        self.frames
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.geometry.pixel_count();
        &self.frames[t * n..(t + 1) * n]
    }
}

/// Blanks every sketch pixel outside the layer's per-frame mask.
pub fn mask_sketch(sketch: &SketchSequence, masks: &[PixelMask]) -> Result<SketchSequence> {
    let g = sketch.geometry;
    if masks.len() != g.frame_count {
        return Err(Error::GeometryMismatch {
            expected: g.to_string(),
            found: format!("{} layer frames", masks.len()),
        });
    }
    let n = g.pixel_count();
    let mut frames = vec![SKETCH_BLANK; sketch.frames.len()];
    for (t, mask) in masks.iter().enumerate() {
        g.frame_size().check(mask.size())?;
        for (start, len) in mask.spans() {
            let (a, b) = (t * n + start, t * n + start + len);
            frames[a..b].copy_from_slice(&sketch.frames[a..b]);
        }
    }
    Ok(SketchSequence { geometry: g, frames })
}

/// Mean squared point distance over every (track, frame), matching tracks by id.
pub fn track_mse(predicted: &[Track], reference: &[Track]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::TrackMismatch(format!(
            "{} predicted tracks vs {} reference tracks",
            predicted.len(),
            reference.len()
        )));
    }
    let refs: HashMap<u32, &Track> = reference.iter().map(|t| (t.id, t)).collect();
    if refs.len() != reference.len() {
        return Err(Error::TrackMismatch("duplicate reference track id".into()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let mut seen = std::collections::HashSet::new();
    for p in predicted {
        let Some(r) = refs.get(&p.id) else {
            return Err(Error::TrackMismatch(format!("track {} has no reference", p.id)));
        };
        if !seen.insert(p.id) {
            return Err(Error::TrackMismatch(format!("duplicate predicted track id {}", p.id)));
        }
        if p.points.len() != r.points.len() {
            return Err(Error::TrackMismatch(format!(
                "track {}: {} vs {} points",
                p.id,
                p.points.len(),
                r.points.len()
            )));
        }
        for (a, b) in p.points.iter().zip(&r.points) {
            let (dx, dy) = (a.x as f64 - b.x as f64, a.y as f64 - b.y as f64);
            sum += dx * dx + dy * dy;
        }
        count += p.points.len();
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn geom(w: u32, h: u32, f: usize) -> ClipGeometry {
        ClipGeometry::new(w, h, f).unwrap()
    }

    fn track(id: u32, pts: impl IntoIterator<Item = (f32, f32)>) -> Track {
        Track {
            id,
            points: pts.into_iter().map(|(x, y)| TrackPoint { x, y, visible: true }).collect(),
        }
    }

    #[test]
    fn grid_cases() {
        assert_eq!(seed_grid(geom(512, 320, 2), 60).len(), 3600);
        assert_eq!(seed_grid(geom(512, 320, 2), 1), vec![(256.0, 160.0)]);
        assert_eq!(
            seed_grid(geom(4, 4, 2), 2),
            vec![(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)]
        );
    }

    fn left_masklet(g: ClipGeometry) -> Masklet {
        let m = PixelMask::from_fn(g.frame_size(), |x, _| x < g.width / 2);
        Masklet::new(ElementId(4), 0, vec![m; g.frame_count]).unwrap()
    }

    /// Track that sits inside the left half for `inside` of 16 frames.
    fn partly_inside(id: u32, inside: usize) -> Track {
        track(id, (0..16).map(|t| if t < inside { (2.0, 2.0) } else { (12.0, 2.0) }))
    }

    #[test]
    fn overlap_threshold_is_strict() {
        let g = geom(16, 8, 16);
        let m = [left_masklet(g)];
        let all = [partly_inside(1, 16), partly_inside(2, 12), partly_inside(3, 14)];
        let out = filter_tracks(g, &all, &m, 0.8).unwrap();
        let kept: Vec<u32> = out.kept[&ElementId(4)].iter().map(|t| t.id).collect();
        assert_eq!(kept, vec![1, 3]);
        assert_eq!(out.dropped, 1);
        // 13/16 = 0.8125 passes, and exactly 0.8 would not.
        let out = filter_tracks(g, &[partly_inside(7, 13)], &m, 0.8).unwrap();
        assert_eq!(out.kept_count(), 1);
        let g5 = geom(16, 8, 5);
        let t = track(8, (0..5).map(|t| if t < 4 { (1.0, 1.0) } else { (9.0, 1.0) }));
        assert_eq!(filter_tracks(g5, &[t], &[left_masklet(g5)], 0.8).unwrap().dropped, 1);
    }

    #[test]
    fn tracks_outside_masklets_are_unassigned() {
        let g = geom(16, 8, 16);
        let out = filter_tracks(g, &[partly_inside(1, 0)], &[left_masklet(g)], 0.8).unwrap();
        assert_eq!(out.unassigned, 1);
        assert_eq!(out.kept_count(), 0);
    }

    #[test]
    fn invisible_frames_do_not_count_as_inside() {
        let g = geom(16, 8, 16);
        let mut t = partly_inside(1, 16);
        for p in &mut t.points[..4] {
            p.visible = false;
        }
        assert_eq!(filter_tracks(g, &[t], &[left_masklet(g)], 0.8).unwrap().dropped, 1);
    }

    #[test]
    fn static_track_heatmap_peak_and_zero_offsets() {
        let g = geom(200, 100, 4);
        let map = rasterize_trajectories(g, &[track(0, [(100.0, 50.0); 4])], 5.0).unwrap();
        for t in 0..4 {
            assert_eq!(map.get(t, 0, 100, 50), 1.0);
            assert!(map.get(t, 0, 103, 50) > 0.0 && map.get(t, 0, 103, 50) < 1.0);
            assert_eq!(map.get(t, 0, 116, 50), 0.0);
        }
        let n = g.pixel_count();
        for t in 0..4 {
            assert!(map.data()[(t * 3 + 1) * n..(t * 3 + 3) * n].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn moving_track_offset_is_normalized_by_width() {
        let g = geom(512, 64, 4);
        let tr = track(0, (0..4).map(|t| (100.0 + 8.0 * t as f32, 30.0)));
        let map = rasterize_trajectories(g, &[tr], 5.0).unwrap();
        for t in 0..3 {
            let x = 100 + 8 * t as u32;
            assert_eq!(map.get(t, 1, x, 30), 0.015625);
            assert_eq!(map.get(t, 1, x + 3, 32), 0.015625);
            assert_eq!(map.get(t, 2, x, 30), 0.0);
        }
        assert_eq!(map.get(3, 1, 124, 30), 0.0);
        assert_eq!(map.get(3, 0, 124, 30), 1.0);
    }

    #[test]
    fn empty_track_set_is_all_zero() {
        let map = rasterize_trajectories(geom(8, 8, 3), &[], 5.0).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
        assert!(rasterize_trajectories(geom(8, 8, 3), &[], 0.0).is_err());
    }

    #[test]
    fn nearest_track_wins_overlapping_blobs() {
        let g = geom(64, 16, 2);
        let a = track(0, [(10.0, 8.0), (11.0, 8.0)]);
        let b = track(1, [(16.0, 8.0), (16.0, 10.0)]);
        let map = rasterize_trajectories(g, &[b, a], 5.0).unwrap();
        assert_eq!(map.get(0, 1, 12, 8), 1.0 / 64.0);
        assert_eq!(map.get(0, 2, 12, 8), 0.0);
        assert_eq!(map.get(0, 2, 15, 8), 2.0 / 16.0);
        assert_eq!(map.get(0, 1, 15, 8), 0.0);
        // Equidistant pixel goes to the lower track id.
        assert_eq!(map.get(0, 1, 13, 8), 1.0 / 64.0);
    }

    #[test]
    fn invisible_endpoint_breaks_offset_chain() {
        let g = geom(64, 16, 3);
        let mut tr = track(0, [(10.0, 8.0), (14.0, 8.0), (18.0, 8.0)]);
        tr.points[1].visible = false;
        let map = rasterize_trajectories(g, &[tr], 2.0).unwrap();
        assert_eq!(map.get(0, 0, 10, 8), 1.0);
        assert_eq!(map.get(0, 1, 10, 8), 0.0);
        assert!(map.data()[3 * g.pixel_count()..6 * g.pixel_count()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_map_cases() {
        let g = geom(4, 2, 2);
        let full = vec![1u8; 16];
        let m = score_map(g, &full, crate::motion::normalize_score(30.0, 30.0)).unwrap();
        assert!(m.channel(1, 1).iter().all(|&v| v == 1.0));
        let m = score_map(g, &full, 0.0).unwrap();
        assert!(m.channel(0, 1).iter().all(|&v| v == 0.0));
        assert!(m.channel(0, 0).iter().all(|&v| v == 1.0));
        let half: Vec<u8> = (0..16).map(|i| (i % 4 < 2) as u8).collect();
        let m = score_map(g, &half, crate::motion::normalize_score(15.0, 30.0)).unwrap();
        for t in 0..2 {
            for (p, &v) in m.channel(t, 1).iter().enumerate() {
                assert_eq!(v, if p % 4 < 2 { 0.5 } else { 0.0 });
            }
        }
    }

    #[test]
    fn sketch_masking_cases() {
        let g = geom(4, 4, 2);
        let s = g.frame_size();
        let sketch = SketchSequence::new(g, (0..32).map(|i| (i * 5) as u8).collect()).unwrap();
        assert_eq!(mask_sketch(&sketch, &[PixelMask::full(s), PixelMask::full(s)]).unwrap(), sketch);
        let out = mask_sketch(&sketch, &[PixelMask::empty(s), PixelMask::full(s)]).unwrap();
        assert!(out.frame(0).iter().all(|&v| v == SKETCH_BLANK));
        let left = PixelMask::from_fn(s, |x, _| x < 2);
        let out = mask_sketch(&sketch, &[left.clone(), left.clone()]).unwrap();
        for t in 0..2 {
            for p in 0..16 {
                let want = if p % 4 < 2 { sketch.frame(t)[p] } else { SKETCH_BLANK };
                assert_eq!(out.frame(t)[p], want);
            }
        }
        assert_eq!(mask_sketch(&out, &[left.clone(), left]).unwrap(), out);
    }

    #[test]
    fn mse_cases() {
        let a = [track(0, [(1.0, 1.0), (2.0, 2.0)]), track(1, [(5.0, 5.0), (6.0, 6.0)])];
        assert_eq!(track_mse(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Track> = a
            .iter()
            .map(|t| track(t.id, t.points.iter().map(|p| (p.x + 3.0, p.y))))
            .collect();
        assert_eq!(track_mse(&shifted, &a).unwrap(), 9.0);
        let b = [track(0, [(2.0, 3.0), (3.0, 4.0)]), a[1].clone()];
        assert_eq!(track_mse(&b, &a).unwrap(), 2.5);
        assert!(track_mse(&[track(9, [(0.0, 0.0), (0.0, 0.0)]), a[1].clone()], &a).is_err());
        assert!(track_mse(&a[..1], &a).is_err());
    }

    #[test]
    fn subsample_bounds() {
        let tracks: Vec<Track> = (0..20).map(|i| track(i, [(0.0, 0.0)])).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = subsample_tracks(&tracks, 8, &mut rng);
            assert!((1..=8).contains(&s.len()));
            assert!(s.windows(2).all(|w| w[0].id < w[1].id));
        }
        for _ in 0..20 {
            assert!((1..=2).contains(&subsample_tracks(&tracks[..2], 8, &mut rng).len()));
        }
        assert!(subsample_tracks(&[], 8, &mut rng).is_empty());
    }
}
