//! Flow-based motion scores and motion-based hierarchical merging of masklets
//! into a bounded number of layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{resolve_overlaps, union_all, ClipGeometry, ElementId, MaskSet, PixelMask};
use crate::segment::Masklet;

/// Dense forward flow for frames `0..F-1`, interleaved `(u, v)` in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    geometry: ClipGeometry,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(geometry: ClipGeometry, data: Vec<f32>) -> Result<Self> {
        let expected = Self::value_count(geometry);
        if data.len() != expected {
            return Err(Error::InvalidGeometry(format!(
                "flow for {geometry} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::corrupt("flow", format!("non-finite component at index {i}")));
        }
        Ok(FlowField { geometry, data })
    }

    pub fn zeros(geometry: ClipGeometry) -> Self {
        FlowField {
            geometry,
            data: vec![0.0; Self::value_count(geometry)],
        }
    }

    fn value_count(geometry: ClipGeometry) -> usize {
        (geometry.frame_count - 1) * geometry.pixel_count() * 2
    }

    pub fn geometry(&self) -> ClipGeometry {
        self.geometry
    }

    /// Number of flow planes, `F - 1`.
    pub fn plane_count(&self) -> usize {
        self.geometry.frame_count - 1
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, frame: usize) -> &[f32] {
        let n = self.geometry.pixel_count() * 2;
        &self.data[frame * n..(frame + 1) * n]
    }

    pub fn plane_mut(&mut self, frame: usize) -> &mut [f32] {
        let n = self.geometry.pixel_count() * 2;
        &mut self.data[frame * n..(frame + 1) * n]
    }

    pub fn get(&self, frame: usize, x: u32, y: u32) -> (f32, f32) {
        let i = (y as usize * self.geometry.width as usize + x as usize) * 2;
        let p = self.plane(frame);
        (p[i], p[i + 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionClass {
    Static,
    Dynamic,
}

/// Raw mean flow magnitude and its clamped normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionScore {
    pub raw: f64,
    pub normalized: f64,
}

impl MotionScore {
    pub fn new(raw: f64, s_max: f64) -> Self {
        MotionScore {
            raw,
            normalized: normalize_score(raw, s_max),
        }
    }
}

/// `min(raw / s_max, 1)`.
pub fn normalize_score(raw: f64, s_max: f64) -> f64 {
    (raw / s_max).min(1.0)
}

pub fn classify(raw: f64, eta: f64) -> MotionClass {
    if raw < eta {
        MotionClass::Static
    } else {
        MotionClass::Dynamic
    }
}

/// Mean flow magnitude over every (pixel, frame) where the masklet is set,
/// for frames that have an outgoing flow plane.
pub fn raw_motion_score(masklet: &Masklet, flow: &FlowField) -> Result<f64> {
    if masklet.frame_count() != flow.geometry.frame_count {
        return Err(Error::GeometryMismatch {
            expected: flow.geometry.to_string(),
            found: format!("masklet with {} frames", masklet.frame_count()),
        });
    }
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for t in 0..flow.plane_count() {
        let mask = masklet.mask(t);
        flow.geometry.frame_size().check(mask.size())?;
        let plane = flow.plane(t);
        for (start, len) in mask.spans() {
            for uv in plane[start * 2..(start + len) * 2].chunks_exact(2) {
                let (u, v) = (uv[0] as f64, uv[1] as f64);
                sum += (u * u + v * v).sqrt();
            }
            count += len as u64;
        }
    }
    if count == 0 {
        return Err(Error::UnscorableMasklet(masklet.element_id()));
    }
    Ok(sum / count as f64)
}

pub fn masklet_motion_score(masklet: &Masklet, flow: &FlowField, s_max: f64) -> Result<MotionScore> {
    Ok(MotionScore::new(raw_motion_score(masklet, flow)?, s_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Maximum number of layers per clip.
    pub capacity: usize,
    /// Clusters closer than this in score keep merging.
    pub eta_s: f64,
    /// Layers scoring below this are static.
    pub eta: f64,
    pub s_max: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            capacity: 4,
            eta_s: 1.0,
            eta: 0.1,
            s_max: 30.0,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 1 {
            return Err(Error::Config("layer capacity must be at least 1".into()));
        }
        if !(self.eta_s >= 0.0) || !self.eta_s.is_finite() {
            return Err(Error::Config(format!("eta_s must be a finite value >= 0, got {}", self.eta_s)));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be a finite value >= 0, got {}", self.eta)));
        }
        if !(self.s_max > 0.0) || !self.s_max.is_finite() {
            return Err(Error::Config(format!("s_max must be finite and > 0, got {}", self.s_max)));
        }
        Ok(())
    }
}

/// A group of inputs produced by [`agglomerate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCluster {
    /// Member element ids, ascending.
    pub members: Vec<ElementId>,
    /// Unweighted mean of the member scores, summed in member order.
    pub score: f64,
}

impl ScoreCluster {
    fn smallest(&self) -> ElementId {
        self.members[0]
    }
}

fn mean_of(members: &[ElementId], score_of: impl Fn(ElementId) -> f64) -> f64 {
    members.iter().map(|&id| score_of(id)).sum::<f64>() / members.len() as f64
}

/// Bottom-up 1-D agglomeration on scores.
///
/// Repeatedly merges the closest pair of clusters until there are at most
/// `capacity` clusters and every pair differs by more than `eta_s`. Equal
/// differences go to the pair whose smallest member ids are lowest.
pub fn agglomerate(items: &[(ElementId, f64)], capacity: usize, eta_s: f64) -> Result<Vec<ScoreCluster>> {
    if items.is_empty() {
        return Err(Error::EmptyMerge);
    }
    if let Some((id, s)) = items.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Config(format!("score {s} of element {id} is not finite")));
    }
    let mut ids: Vec<ElementId> = items.iter().map(|(id, _)| *id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateElement(w[0]));
    }
    let score_of = |id: ElementId| items.iter().find(|(e, _)| *e == id).map(|(_, s)| *s).unwrap();

    let mut clusters: Vec<ScoreCluster> = items
        .iter()
        .map(|&(id, s)| ScoreCluster {
            members: vec![id],
            score: s,
        })
        .collect();

    loop {
        clusters.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.smallest().cmp(&b.smallest())));
        if clusters.len() < 2 {
            break;
        }
        // In one dimension the closest pair is always adjacent in sorted order.
        let (best, diff) = (0..clusters.len() - 1)
            .map(|i| (i, clusters[i + 1].score - clusters[i].score))
            .min_by(|&(i, da), &(j, db)| {
                da.total_cmp(&db).then_with(|| pair_key(&clusters, i).cmp(&pair_key(&clusters, j)))
            })
            .unwrap();
        if clusters.len() <= capacity && diff > eta_s {
            break;
        }
        let upper = clusters.remove(best + 1);
        let lower = &mut clusters[best];
        lower.members.extend(upper.members);
        lower.members.sort();
        lower.score = mean_of(&lower.members, score_of);
    }
    Ok(clusters)
}

fn pair_key(clusters: &[ScoreCluster], i: usize) -> (ElementId, ElementId) {
    let (a, b) = (clusters[i].smallest(), clusters[i + 1].smallest());
    (a.min(b), a.max(b))
}

/// Merged group of masklets with one motion score.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub layer_id: usize,
    pub members: Vec<ElementId>,
    /// Union of member masks for each frame.
    pub masks: Vec<PixelMask>,
    pub score: MotionScore,
    pub class: MotionClass,
}

/// Merges masklets with similar motion into at most `capacity` layers
/// (unless the input is smaller). Layers are ordered by smallest member id.
pub fn hierarchical_merge(masklets: &[Masklet], raw_scores: &[f64], cfg: &MergeConfig) -> Result<Vec<Layer>> {
    cfg.validate()?;
    if masklets.is_empty() {
        return Err(Error::EmptyMerge);
    }
    if masklets.len() != raw_scores.len() {
        return Err(Error::Config(format!(
            "{} masklets but {} scores",
            masklets.len(),
            raw_scores.len()
        )));
    }
    let frame_count = masklets[0].frame_count();
    let size = masklets[0].mask(0).size();
    if masklets.iter().any(|m| m.frame_count() != frame_count) {
        return Err(Error::GeometryMismatch {
            expected: format!("{frame_count} frames"),
            found: "masklets with differing frame counts".into(),
        });
    }
    let items: Vec<(ElementId, f64)> = masklets.iter().zip(raw_scores).map(|(m, &s)| (m.element_id(), s)).collect();
    let mut clusters = agglomerate(&items, cfg.capacity, cfg.eta_s)?;
    clusters.sort_by_key(|c| c.smallest());

    let by_id = |id: ElementId| masklets.iter().find(|m| m.element_id() == id).unwrap();
    let mut layers = clusters
        .into_iter()
        .enumerate()
        .map(|(layer_id, c)| {
            let masks = (0..frame_count)
                .map(|t| union_all(size, c.members.iter().map(|&id| by_id(id).mask(t))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Layer {
                layer_id,
                class: classify(c.score, cfg.eta),
                score: MotionScore::new(c.score, cfg.s_max),
                members: c.members,
                masks,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for t in 0..frame_count {
        let set = MaskSet::new(
            t,
            size,
            layers.iter().map(|l| (ElementId(l.layer_id as u32), l.masks[t].clone())).collect(),
        )?;
        for (layer, (_, m)) in layers.iter_mut().zip(resolve_overlaps(&set).into_entries()) {
            layer.masks[t] = m;
        }
    }
    Ok(layers)
}
