//! Key-frame refinement loop that turns per-frame segmentations and a
//! propagation backend into temporally coherent masklets.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::mask::{
    coverage, intersection_over_union, mask_set_subtract, resolve_overlaps, ClipGeometry, ElementId,
    MaskSet, PixelMask, SubtractParams,
};

/// Minimum fraction of a prompt that the propagated mask must cover at the prompt frame.
pub const PROMPT_COVERAGE: f64 = 0.9;

/// One element's mask in every frame of the clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masklet {
    element_id: ElementId,
    first_appearance: usize,
    masks: Vec<PixelMask>,
}

impl Masklet {
    pub fn new(element_id: ElementId, first_appearance: usize, masks: Vec<PixelMask>) -> Result<Self> {
        if first_appearance >= masks.len() {
            return Err(Error::Provider(format!(
                "masklet {element_id}: first appearance {first_appearance} outside {} frames",
                masks.len()
            )));
        }
        if let Some(t) = masks[..first_appearance].iter().position(|m| !m.is_empty()) {
            return Err(Error::Provider(format!(
                "masklet {element_id}: frame {t} is set before first appearance {first_appearance}"
            )));
        }
        Ok(Masklet {
            element_id,
            first_appearance,
            masks,
        })
    }

    pub fn element_id(&self) -> ElementId {
        self.element_id
    }

    pub fn first_appearance(&self) -> usize {
        self.first_appearance
    }

    pub fn masks(&self) -> &[PixelMask] {
        &self.masks
    }

    pub fn mask(&self, frame: usize) -> &PixelMask {
        &self.masks[frame]
    }

    pub fn frame_count(&self) -> usize {
        self.masks.len()
    }

    pub fn total_area(&self) -> u64 {
        self.masks.iter().map(PixelMask::area).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub frame: usize,
    pub mask: PixelMask,
    pub element_id: ElementId,
}

/// Prompts handed to the propagation backend; one per element.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSet {
    prompts: Vec<Prompt>,
}

impl PromptSet {
    pub fn push(&mut self, prompt: Prompt) -> Result<()> {
        if self.prompts.iter().any(|p| p.element_id == prompt.element_id) {
            return Err(Error::DuplicateElement(prompt.element_id));
        }
        self.prompts.push(prompt);
        Ok(())
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Per-frame element segmentation (the role SAM plays upstream).
pub trait SegmentationProvider {
    fn segment(&self, frame: usize) -> Result<MaskSet>;
}

/// Propagates prompt masks through the whole clip (the role SAM2 plays upstream).
pub trait PropagationProvider {
    fn propagate(&self, prompts: &PromptSet) -> Result<Vec<Masklet>>;
}

/// Segmentation backed by precomputed per-frame mask sets.
#[derive(Debug, Clone, Default)]
pub struct FrameSegmenter {
    frames: BTreeMap<usize, MaskSet>,
}

impl FrameSegmenter {
    pub fn new(sets: impl IntoIterator<Item = MaskSet>) -> Self {
        FrameSegmenter {
            frames: sets.into_iter().map(|s| (s.frame_index(), s)).collect(),
        }
    }
}

impl SegmentationProvider for FrameSegmenter {
    fn segment(&self, frame: usize) -> Result<MaskSet> {
        self.frames
            .get(&frame)
            .cloned()
            .ok_or_else(|| Error::Provider(format!("no segmentation for frame {frame}")))
    }
}

/// Propagation backed by a pool of precomputed full-clip masklets.
///
/// Each prompt is matched to the unused pool entry with the highest IoU at the
/// prompt frame among those covering at least [`PROMPT_COVERAGE`] of the prompt.
#[derive(Debug, Clone)]
pub struct MaskletPool {
    pool: Vec<Vec<PixelMask>>,
}

impl MaskletPool {
    pub fn new(pool: Vec<Vec<PixelMask>>) -> Self {
        MaskletPool { pool }
    }

    /// Builds the pool from per-frame mask sets; element ids identify pool entries.
    pub fn from_frame_sets(geometry: ClipGeometry, sets: &[MaskSet]) -> Result<Self> {
        let size = geometry.frame_size();
        let mut by_id: BTreeMap<ElementId, Vec<PixelMask>> = BTreeMap::new();
        let mut seen_frames = HashSet::new();
        for set in sets {
            size.check(set.size())?;
            if set.frame_index() >= geometry.frame_count || !seen_frames.insert(set.frame_index()) {
                return Err(Error::Provider(format!(
                    "masklet pool frame {} is duplicated or outside the clip",
                    set.frame_index()
                )));
            }
            for (id, mask) in set.entries() {
                by_id
                    .entry(*id)
                    .or_insert_with(|| vec![PixelMask::empty(size); geometry.frame_count])[set.frame_index()] =
                    mask.clone();
            }
        }
        Ok(MaskletPool {
            pool: by_id.into_values().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }
}

impl PropagationProvider for MaskletPool {
    fn propagate(&self, prompts: &PromptSet) -> Result<Vec<Masklet>> {
        let mut taken = vec![false; self.pool.len()];
        let mut out = Vec::with_capacity(prompts.len());
        for prompt in prompts.prompts() {
            let mut best: Option<(usize, f64)> = None;
            let mut best_cov = 0.0f64;
            for (i, track) in self.pool.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let Some(at) = track.get(prompt.frame) else {
                    continue;
                };
                let cov = coverage(&prompt.mask, at)?;
                best_cov = best_cov.max(cov);
                if cov < PROMPT_COVERAGE {
                    continue;
                }
                let iou = intersection_over_union(&prompt.mask, at)?;
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((i, iou));
                }
            }
            let Some((idx, _)) = best else {
                return Err(Error::PromptCoverage {
                    element: prompt.element_id,
                    frame: prompt.frame,
                    best: best_cov,
                });
            };
            taken[idx] = true;
            let size = prompt.mask.size();
            let masks = self.pool[idx]
                .iter()
                .enumerate()
                .map(|(t, m)| if t < prompt.frame { PixelMask::empty(size) } else { m.clone() })
                .collect();
            out.push(Masklet::new(prompt.element_id, prompt.frame, masks)?);
        }
        Ok(out)
    }
}

/// Key frames sampled every `interval` frames starting at frame 0.
pub fn key_frames(geometry: ClipGeometry, interval: usize) -> Vec<usize> {
    assert!(interval >= 1, "key frame interval must be at least 1");
    (0..geometry.frame_count).step_by(interval).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurateParams {
    pub key_interval: usize,
    pub subtract: SubtractParams,
}

impl Default for CurateParams {
    fn default() -> Self {
        CurateParams {
            key_interval: 4,
            subtract: SubtractParams::default(),
        }
    }
}

/// What happened at one key frame of the refinement loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyFrameStep {
    pub frame: usize,
    pub new_elements: Vec<ElementId>,
    pub prompt_count: usize,
}

#[derive(Debug, Clone)]
pub struct Curation {
    pub masklets: Vec<Masklet>,
    pub steps: Vec<KeyFrameStep>,
}

/// Runs the key-frame refinement loop and returns per-frame disjoint masklets.
pub fn curate_masklets(
    geometry: ClipGeometry,
    seg: &dyn SegmentationProvider,
    prop: &dyn PropagationProvider,
    params: CurateParams,
) -> Result<Curation> {
    if params.key_interval == 0 {
        return Err(Error::Config("key frame interval must be at least 1".into()));
    }
    let size = geometry.frame_size();
    let keys = key_frames(geometry, params.key_interval);
    let mut prompts = PromptSet::default();
    let mut next_id = 0u32;
    let mut masklets: Vec<Masklet> = Vec::new();
    let mut steps = Vec::with_capacity(keys.len());

    for (i, &frame) in keys.iter().enumerate() {
        let found = seg.segment(frame)?;
        size.check(found.size())?;
        let found = resolve_overlaps(&found);
        let fresh: Vec<PixelMask> = if i == 0 {
            found.into_entries().into_iter().map(|(_, m)| m).filter(|m| !m.is_empty()).collect()
        } else {
            let existing = MaskSet::new(
                frame,
                size,
                masklets.iter().map(|m| (m.element_id, m.masks[frame].clone())).collect(),
            )?;
            mask_set_subtract(&found, &existing, params.subtract)?
                .into_entries()
                .into_iter()
                .map(|(_, m)| m)
                .collect()
        };

        let mut new_elements = Vec::with_capacity(fresh.len());
        for mask in fresh {
            let element_id = ElementId(next_id);
            next_id += 1;
            prompts.push(Prompt {
                frame,
                mask,
                element_id,
            })?;
            new_elements.push(element_id);
        }
        if !new_elements.is_empty() {
            masklets = prop.propagate(&prompts)?;
            check_propagation(geometry, &prompts, &masklets)?;
        }
        steps.push(KeyFrameStep {
            frame,
            new_elements,
            prompt_count: prompts.len(),
        });
    }

    Ok(Curation {
        masklets: finalize(geometry, masklets)?,
        steps,
    })
}

fn check_propagation(geometry: ClipGeometry, prompts: &PromptSet, masklets: &[Masklet]) -> Result<()> {
    if masklets.len() != prompts.len() {
        return Err(Error::Provider(format!(
            "propagation returned {} masklets for {} prompts",
            masklets.len(),
            prompts.len()
        )));
    }
    for prompt in prompts.prompts() {
        let Some(m) = masklets.iter().find(|m| m.element_id == prompt.element_id) else {
            return Err(Error::Provider(format!("no masklet for prompt {}", prompt.element_id)));
        };
        if m.frame_count() != geometry.frame_count {
            return Err(Error::Provider(format!(
                "masklet {} has {} frames, clip has {}",
                m.element_id,
                m.frame_count(),
                geometry.frame_count
            )));
        }
        for mask in &m.masks {
            geometry.frame_size().check(mask.size())?;
        }
        let cov = coverage(&prompt.mask, &m.masks[prompt.frame])?;
        if cov < PROMPT_COVERAGE {
            return Err(Error::PromptCoverage {
                element: prompt.element_id,
                frame: prompt.frame,
                best: cov,
            });
        }
    }
    Ok(())
}

/// Resolves per-frame overlaps and re-anchors first appearances on the result.
fn finalize(geometry: ClipGeometry, mut masklets: Vec<Masklet>) -> Result<Vec<Masklet>> {
    let size = geometry.frame_size();
    for t in 0..geometry.frame_count {
        let set = MaskSet::new(
            t,
            size,
            masklets.iter().map(|m| (m.element_id, m.masks[t].clone())).collect(),
        )?;
        for (m, (_, resolved)) in masklets.iter_mut().zip(resolve_overlaps(&set).into_entries()) {
            m.masks[t] = resolved;
        }
    }
    Ok(masklets
        .into_iter()
        .filter_map(|mut m| {
            let first = m.masks.iter().position(|mask| !mask.is_empty())?;
            m.first_appearance = m.first_appearance.max(first);
            Some(m)
        })
        .collect())
}

/// Providers that replay a finished curation; re-curating with them adds nothing.
pub fn replay_providers(geometry: ClipGeometry, masklets: &[Masklet]) -> Result<(FrameSegmenter, MaskletPool)> {
    let size = geometry.frame_size();
    let sets = (0..geometry.frame_count)
        .map(|t| {
            MaskSet::new(
                t,
                size,
                masklets
                    .iter()
                    .filter(|m| !m.masks[t].is_empty())
                    .map(|m| (m.element_id, m.masks[t].clone()))
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = MaskletPool::new(masklets.iter().map(|m| m.masks.clone()).collect());
    Ok((FrameSegmenter::new(sets), pool))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::FrameSize;

    fn geom(f: usize) -> ClipGeometry {
        ClipGeometry::new(32, 16, f).unwrap()
    }

    #[test]
    fn key_frame_cases() {
        assert_eq!(key_frames(geom(16), 4), vec![0, 4, 8, 12]);
        assert_eq!(key_frames(geom(3), 4), vec![0]);
        assert_eq!(key_frames(geom(9), 4), vec![0, 4, 8]);
        assert_eq!(key_frames(geom(5), 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn masklet_rejects_pixels_before_appearance() {
        let s = FrameSize::new(4, 4).unwrap();
        let r = Masklet::new(ElementId(0), 1, vec![PixelMask::full(s), PixelMask::full(s)]);
        assert!(r.is_err());
    }

    fn rect(size: FrameSize, x0: u32, y0: u32, w: u32, h: u32) -> PixelMask {
        PixelMask::from_fn(size, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    fn static_clip(f: usize) -> (ClipGeometry, Vec<MaskSet>) {
        let g = geom(f);
        let s = g.frame_size();
        let obj = rect(s, 4, 4, 10, 8);
        let bg = crate::mask::combine(&PixelMask::full(s), &obj, crate::mask::CombineMode::Subtract).unwrap();
        let sets = (0..f)
            .map(|t| MaskSet::new(t, s, vec![(ElementId(10), bg.clone()), (ElementId(11), obj.clone())]).unwrap())
            .collect();
        (g, sets)
    }

    #[test]
    fn static_scene_yields_object_and_background() {
        let (g, sets) = static_clip(16);
        let seg = FrameSegmenter::new(sets.clone());
        let pool = MaskletPool::from_frame_sets(g, &sets).unwrap();
        let cur = curate_masklets(g, &seg, &pool, CurateParams::default()).unwrap();
        assert_eq!(cur.masklets.len(), 2);
        for m in &cur.masklets {
            assert_eq!(m.first_appearance(), 0);
            assert!(m.masks().iter().all(|x| x == m.mask(0)));
        }
        assert!(cur.steps.iter().skip(1).all(|s| s.new_elements.is_empty()));
    }

    #[test]
    fn unmatched_prompt_is_a_coverage_error() {
        let (g, sets) = static_clip(8);
        let seg = FrameSegmenter::new(sets);
        let empty_pool = MaskletPool::new(vec![vec![PixelMask::empty(g.frame_size()); 8]]);
        let err = curate_masklets(g, &seg, &empty_pool, CurateParams::default()).unwrap_err();
        assert!(matches!(err, Error::PromptCoverage { .. }), "{err}");
    }

    #[test]
    fn missing_segmentation_is_provider_error() {
        let (g, sets) = static_clip(8);
        let pool = MaskletPool::from_frame_sets(g, &sets).unwrap();
        let seg = FrameSegmenter::new(sets.into_iter().take(1));
        let err = curate_masklets(g, &seg, &pool, CurateParams::default()).unwrap_err();
        assert!(matches!(err, Error::Provider(_)));
    }

    #[test]
    fn replay_is_idempotent() {
        let (g, sets) = static_clip(12);
        let seg = FrameSegmenter::new(sets.clone());
        let pool = MaskletPool::from_frame_sets(g, &sets).unwrap();
        let first = curate_masklets(g, &seg, &pool, CurateParams::default()).unwrap();
        let (seg2, pool2) = replay_providers(g, &first.masklets).unwrap();
        let second = curate_masklets(g, &seg2, &pool2, CurateParams::default()).unwrap();
        assert_eq!(second.masklets, first.masklets);
    }
}
