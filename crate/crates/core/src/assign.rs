//! Reference-frame decomposition, motion-based temporal assignment and
//! padding to a fixed layer capacity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{ClipGeometry, FrameSize, PixelMask};
use crate::motion::{Layer, MotionClass};

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceFrame {
    size: FrameSize,
    rgb: Vec<u8>,
}

impl ReferenceFrame {
    pub fn new(size: FrameSize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != size.pixel_count() * 3 {
            return Err(Error::GeometryMismatch {
                expected: format!("{} RGB bytes for {size}", size.pixel_count() * 3),
                found: format!("{} bytes", rgb.len()),
            });
        }
        Ok(ReferenceFrame { size, rgb })
    }

    pub fn size(&self) -> FrameSize {
        self.size
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single reference at frame 0.
    #[default]
    I2v,
    /// References at frames 0 and F-1.
    Interpolation,
}

/// Planar `3 x H x W` region of the image under `mask`, zero elsewhere.
fn region(image: &ReferenceFrame, mask: &PixelMask) -> Vec<u8> {
    let n = image.size.pixel_count();
    let mut out = vec![0u8; 3 * n];
    for (start, len) in mask.spans() {
        for p in start..start + len {
            out[p] = image.rgb[p * 3];
            out[n + p] = image.rgb[p * 3 + 1];
            out[2 * n + p] = image.rgb[p * 3 + 2];
        }
    }
    out
}

/// Splits the reference image into one planar region per layer mask.
pub fn decompose_reference(image: &ReferenceFrame, masks: &[&PixelMask]) -> Result<Vec<Vec<u8>>> {
    let mut claimed = vec![false; image.size.pixel_count()];
    for mask in masks {
        image.size.check(mask.size())?;
        for (start, len) in mask.spans() {
            if claimed[start..start + len].iter().any(|&c| c) {
                return Err(Error::OverlappingLayers(0));
            }
            claimed[start..start + len].fill(true);
        }
    }
    Ok(masks.iter().map(|m| region(image, m)).collect())
}

/// One layer's `F`-frame mask and region tensors before padding.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlot {
    /// `F x 1 x H x W`, values 0/1.
    pub masks: Vec<u8>,
    /// `F x 3 x H x W`.
    pub regions: Vec<u8>,
    pub raw_score: f64,
    pub normalized_score: f64,
    pub class: MotionClass,
}

/// Capacity-padded layer tensors with per-slot validity.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    geometry: ClipGeometry,
    capacity: usize,
    masks: Vec<u8>,
    regions: Vec<u8>,
    validity: Vec<bool>,
    raw_scores: Vec<f64>,
    normalized_scores: Vec<f64>,
    classes: Vec<Option<MotionClass>>,
}

impl LayerStack {
    pub fn geometry(&self) -> ClipGeometry {
        self.geometry
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `N x F x 1 x H x W`.
    pub fn masks(&self) -> &[u8] {
        &self.masks
    }

    /// `N x F x 3 x H x W`.
    pub fn regions(&self) -> &[u8] {
        &self.regions
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|&&v| v).count()
    }

    pub fn raw_scores(&self) -> &[f64] {
        &self.raw_scores
    }

    pub fn normalized_scores(&self) -> &[f64] {
        &self.normalized_scores
    }

    pub fn classes(&self) -> &[Option<MotionClass>] {
        &self.classes
    }

    pub fn mask_shape(&self) -> [usize; 5] {
        let g = self.geometry;
        [self.capacity, g.frame_count, 1, g.height as usize, g.width as usize]
    }

    pub fn region_shape(&self) -> [usize; 5] {
        let g = self.geometry;
        [self.capacity, g.frame_count, 3, g.height as usize, g.width as usize]
    }

    pub fn slot_mask(&self, slot: usize, frame: usize) -> &[u8] {
        let n = self.geometry.pixel_count();
        let base = (slot * self.geometry.frame_count + frame) * n;
        &self.masks[base..base + n]
    }

    pub fn slot_region(&self, slot: usize, frame: usize) -> &[u8] {
        let n = 3 * self.geometry.pixel_count();
        let base = (slot * self.geometry.frame_count + frame) * n;
        &self.regions[base..base + n]
    }

    /// Mask and region tensors, consuming the stack.
    pub fn into_tensors(self) -> (Vec<u8>, Vec<u8>) {
        (self.masks, self.regions)
    }
}

/// Pads up to `capacity` slots; padded slots are zero and invalid.
pub fn pad_layers(geometry: ClipGeometry, slots: Vec<LayerSlot>, capacity: usize) -> Result<LayerStack> {
    if slots.is_empty() {
        return Err(Error::NoLayers);
    }
    if slots.len() > capacity {
        return Err(Error::CapacityExceeded {
            count: slots.len(),
            capacity,
        });
    }
    let per_mask = geometry.frame_count * geometry.pixel_count();
    let mut masks = Vec::with_capacity(capacity * per_mask);
    let mut regions = Vec::with_capacity(capacity * per_mask * 3);
    let mut stack = LayerStack {
        geometry,
        capacity,
        masks: Vec::new(),
        regions: Vec::new(),
        validity: Vec::with_capacity(capacity),
        raw_scores: Vec::with_capacity(capacity),
        normalized_scores: Vec::with_capacity(capacity),
        classes: Vec::with_capacity(capacity),
    };
    for slot in &slots {
        if slot.masks.len() != per_mask || slot.regions.len() != per_mask * 3 {
            return Err(Error::GeometryMismatch {
                expected: geometry.to_string(),
                found: format!("slot with {} mask bytes", slot.masks.len()),
            });
        }
    }
    for slot in slots {
        masks.extend_from_slice(&slot.masks);
        regions.extend_from_slice(&slot.regions);
        stack.validity.push(true);
        stack.raw_scores.push(slot.raw_score);
        stack.normalized_scores.push(slot.normalized_score);
        stack.classes.push(Some(slot.class));
    }
    masks.resize(capacity * per_mask, 0);
    regions.resize(capacity * per_mask * 3, 0);
    stack.validity.resize(capacity, false);
    stack.raw_scores.resize(capacity, 0.0);
    stack.normalized_scores.resize(capacity, 0.0);
    stack.classes.resize(capacity, None);
    stack.masks = masks;
    stack.regions = regions;
    Ok(stack)
}

/// Reference images for the chosen mode.
#[derive(Debug, Clone)]
pub struct References {
    pub first: ReferenceFrame,
    /// Required in interpolation mode.
    pub last: Option<ReferenceFrame>,
}

/// Builds the padded layer stack: static layers repeat the reference
/// decomposition on every non-reference frame, dynamic layers are zero there.
pub fn motion_based_assignment(
    geometry: ClipGeometry,
    layers: &[Layer],
    refs: &References,
    capacity: usize,
    mode: Mode,
) -> Result<LayerStack> {
    if layers.len() > capacity {
        return Err(Error::CapacityExceeded {
            count: layers.len(),
            capacity,
        });
    }
    let size = geometry.frame_size();
    size.check(refs.first.size())?;
    let f = geometry.frame_count;
    for layer in layers {
        if layer.masks.len() != f {
            return Err(Error::GeometryMismatch {
                expected: geometry.to_string(),
                found: format!("layer {} with {} frames", layer.layer_id, layer.masks.len()),
            });
        }
    }
    let first_masks: Vec<&PixelMask> = layers.iter().map(|l| &l.masks[0]).collect();
    let first_regions = decompose_reference(&refs.first, &first_masks)?;
    let last_regions = match mode {
        Mode::I2v => None,
        Mode::Interpolation => {
            let last = refs
                .last
                .as_ref()
                .ok_or_else(|| Error::Config("interpolation mode needs a last-frame reference".into()))?;
            size.check(last.size())?;
            let masks: Vec<&PixelMask> = layers.iter().map(|l| &l.masks[f - 1]).collect();
            Some(decompose_reference(last, &masks).map_err(|e| match e {
                Error::OverlappingLayers(_) => Error::OverlappingLayers(f - 1),
                other => other,
            })?)
        }
    };

    let n = size.pixel_count();
    let slots = layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let mut ref_mask = vec![0u8; n];
            layer.masks[0].paint(&mut ref_mask, 1);
            let mut masks = vec![0u8; f * n];
            let mut regions = vec![0u8; f * 3 * n];
            masks[..n].copy_from_slice(&ref_mask);
            regions[..3 * n].copy_from_slice(&first_regions[i]);
            if layer.class == MotionClass::Static {
                for t in 1..f {
                    masks[t * n..(t + 1) * n].copy_from_slice(&ref_mask);
                    regions[t * 3 * n..(t + 1) * 3 * n].copy_from_slice(&first_regions[i]);
                }
            }
            if let Some(last) = &last_regions {
                let t = f - 1;
                let m = &mut masks[t * n..(t + 1) * n];
                m.fill(0);
                layer.masks[t].paint(m, 1);
                regions[t * 3 * n..(t + 1) * 3 * n].copy_from_slice(&last[i]);
            }
            LayerSlot {
                masks,
                regions,
                raw_score: layer.score.raw,
                normalized_score: layer.score.normalized,
                class: layer.class,
            }
        })
        .collect();
    pad_layers(geometry, slots, capacity)
}
