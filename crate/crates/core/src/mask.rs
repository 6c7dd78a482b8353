//! Run-length encoded binary masks and per-frame mask collections.
//!
//! A [`PixelMask`] stores alternating zero/one run lengths over the frame in
//! row-major order. The first run always counts zeros (and may be empty);
//! every later run is non-empty, so equal bitmaps always encode to equal runs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identifier of a segmented element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u32);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Width and height of a single frame in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: u32,
    pub height: u32,
}

impl FrameSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGeometry(format!(
                "frame size {width}x{height} has an empty axis"
            )));
        }
        if (width as u64) * (height as u64) > u32::MAX as u64 {
            return Err(Error::InvalidGeometry(format!(
                "frame size {width}x{height} exceeds 2^32 pixels"
            )));
        }
        Ok(FrameSize { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub(crate) fn check(&self, other: FrameSize) -> Result<()> {
        if *self != other {
            return Err(Error::GeometryMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for FrameSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Spatial size plus frame count shared by every mask, flow and track of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipGeometry {
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
}

impl ClipGeometry {
    pub fn new(width: u32, height: u32, frame_count: usize) -> Result<Self> {
        FrameSize::new(width, height)?;
        if frame_count < 2 {
            return Err(Error::InvalidGeometry(format!(
                "a clip needs at least 2 frames, got {frame_count}"
            )));
        }
        Ok(ClipGeometry {
            width,
            height,
            frame_count,
        })
    }

    pub fn frame_size(&self) -> FrameSize {
        FrameSize {
            width: self.width,
            height: self.height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.frame_size().pixel_count()
    }

    pub(crate) fn check(&self, other: &ClipGeometry) -> Result<()> {
        if self != other {
            return Err(Error::GeometryMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for ClipGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.frame_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    Union,
    Intersect,
    Subtract,
}

impl CombineMode {
    fn apply(self, a: bool, b: bool) -> bool {
        match self {
            CombineMode::Union => a || b,
            CombineMode::Intersect => a && b,
            CombineMode::Subtract => a && !b,
        }
    }
}

/// Binary mask over one frame, stored as canonical row-major runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    size: FrameSize,
    runs: Vec<u32>,
    area: u64,
}

impl PixelMask {
    pub fn empty(size: FrameSize) -> Self {
        PixelMask {
            size,
            runs: vec![size.pixel_count() as u32],
            area: 0,
        }
    }

    pub fn full(size: FrameSize) -> Self {
        PixelMask {
            size,
            runs: vec![0, size.pixel_count() as u32],
            area: size.pixel_count() as u64,
        }
    }

    /// Validates and adopts a run list. Rejects non-canonical input.
    pub fn from_runs(size: FrameSize, runs: Vec<u32>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidRle("run list is empty".into()));
        }
        if let Some(i) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::InvalidRle(format!("zero-length run at index {}", i + 1)));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != size.pixel_count() as u64 {
            return Err(Error::InvalidRle(format!(
                "runs sum to {total}, frame {size} has {} pixels",
                size.pixel_count()
            )));
        }
        let area = runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum();
        Ok(PixelMask { size, runs, area })
    }

    /// Encodes a row-major bitmap with `width * height` entries.
    pub fn from_bitmap(size: FrameSize, bits: &[bool]) -> Result<Self> {
        if bits.len() != size.pixel_count() {
            return Err(Error::InvalidRle(format!(
                "bitmap has {} entries, frame {size} has {} pixels",
                bits.len(),
                size.pixel_count()
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        let mut area = 0u64;
        for &b in bits {
            if b != current {
                runs.push(count);
                count = 0;
                current = b;
            }
            count += 1;
            area += b as u64;
        }
        runs.push(count);
        Ok(PixelMask { size, runs, area })
    }

    /// Builds a mask by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(size: FrameSize, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(size.pixel_count());
        for y in 0..size.height {
            for x in 0..size.width {
                bits.push(f(x, y));
            }
        }
        PixelMask::from_bitmap(size, &bits).expect("bitmap sized from frame")
    }

    /// Builds a mask from sorted, non-overlapping `(start, len)` spans of set pixels.
    pub fn from_spans(size: FrameSize, spans: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let total = size.pixel_count() as u64;
        let mut runs = Vec::new();
        let mut cursor = 0u64;
        let mut area = 0u64;
        for (start, len) in spans {
            if len == 0 {
                continue;
            }
            let (start, len) = (start as u64, len as u64);
            if start < cursor || start + len > total {
                return Err(Error::InvalidRle(format!(
                    "span ({start}, {len}) is unsorted or out of range"
                )));
            }
            if start == cursor && !runs.is_empty() {
                // Adjacent to the previous span: extend it.
                *runs.last_mut().unwrap() += len as u32;
            } else {
                runs.push((start - cursor) as u32);
                runs.push(len as u32);
            }
            cursor = start + len;
            area += len;
        }
        if runs.is_empty() {
            return Ok(PixelMask::empty(size));
        }
        if cursor < total {
            runs.push((total - cursor) as u32);
        }
        Ok(PixelMask { size, runs, area })
    }

    pub fn size(&self) -> FrameSize {
        self.size
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    /// Iterates `(start, len)` spans of set pixels in row-major order.
    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut pos = 0usize;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as usize;
            (i % 2 == 1).then_some((start, r as usize))
        })
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.size.width || y >= self.size.height {
            return false;
        }
        let idx = y as usize * self.size.width as usize + x as usize;
        self.spans()
            .take_while(|&(start, _)| start <= idx)
            .any(|(start, len)| idx < start + len)
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.size.pixel_count()];
        for (start, len) in self.spans() {
            bits[start..start + len].fill(true);
        }
        bits
    }

    /// Writes `value` into `buf` at every set pixel.
    pub fn paint<T: Copy>(&self, buf: &mut [T], value: T) {
        for (start, len) in self.spans() {
            buf[start..start + len].fill(value);
        }
    }

    /// Positions where the pixel state flips, in increasing order.
    fn toggles(&self) -> impl Iterator<Item = u64> + '_ {
        let last = self.runs.len() - 1;
        self.runs[..last].iter().scan(0u64, |acc, &r| {
            *acc += r as u64;
            Some(*acc)
        })
    }

    fn from_toggles(size: FrameSize, toggles: &[u64]) -> Self {
        let total = size.pixel_count() as u64;
        let mut runs = Vec::with_capacity(toggles.len() + 1);
        let mut prev = 0u64;
        let mut area = 0u64;
        for (i, &t) in toggles.iter().enumerate() {
            runs.push((t - prev) as u32);
            if i % 2 == 1 {
                area += t - prev;
            }
            prev = t;
        }
        runs.push((total - prev) as u32);
        if toggles.len() % 2 == 1 {
            area += total - prev;
        }
        PixelMask { size, runs, area }
    }
}

/// Exact per-pixel boolean combination of two masks.
pub fn combine(a: &PixelMask, b: &PixelMask, mode: CombineMode) -> Result<PixelMask> {
    a.size.check(b.size)?;
    let ta: Vec<u64> = a.toggles().collect();
    let tb: Vec<u64> = b.toggles().collect();
    let (mut i, mut j) = (0, 0);
    let (mut sa, mut sb, mut out) = (false, false, false);
    let mut toggles = Vec::with_capacity(ta.len() + tb.len());
    while i < ta.len() || j < tb.len() {
        let next = ta.get(i).copied().unwrap_or(u64::MAX).min(tb.get(j).copied().unwrap_or(u64::MAX));
        if ta.get(i) == Some(&next) {
            sa = !sa;
            i += 1;
        }
        if tb.get(j) == Some(&next) {
            sb = !sb;
            j += 1;
        }
        let state = mode.apply(sa, sb);
        if state != out {
            toggles.push(next);
            out = state;
        }
    }
    Ok(PixelMask::from_toggles(a.size, &toggles))
}

/// Fraction of `a`'s pixels that are also set in `b`.
pub fn coverage(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyMask);
    }
    let shared = combine(a, b, CombineMode::Intersect)?;
    Ok(shared.area() as f64 / a.area() as f64)
}

pub fn intersection_over_union(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    let inter = combine(a, b, CombineMode::Intersect)?.area();
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Union of any number of masks; an empty iterator yields the empty mask.
pub fn union_all<'a>(size: FrameSize, masks: impl IntoIterator<Item = &'a PixelMask>) -> Result<PixelMask> {
    masks
        .into_iter()
        .try_fold(PixelMask::empty(size), |acc, m| combine(&acc, m, CombineMode::Union))
}

/// Element masks of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    frame_index: usize,
    size: FrameSize,
    entries: Vec<(ElementId, PixelMask)>,
}

impl MaskSet {
    pub fn new(frame_index: usize, size: FrameSize, entries: Vec<(ElementId, PixelMask)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for (id, mask) in &entries {
            size.check(mask.size())?;
            if !seen.insert(*id) {
                return Err(Error::DuplicateElement(*id));
            }
        }
        Ok(MaskSet {
            frame_index,
            size,
            entries,
        })
    }

    pub fn empty(frame_index: usize, size: FrameSize) -> Self {
        MaskSet {
            frame_index,
            size,
            entries: Vec::new(),
        }
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn size(&self) -> FrameSize {
        self.size
    }

    pub fn entries(&self) -> &[(ElementId, PixelMask)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(ElementId, PixelMask)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ElementId) -> Option<&PixelMask> {
        self.entries.iter().find(|(e, _)| *e == id).map(|(_, m)| m)
    }

    pub fn union(&self) -> PixelMask {
        union_all(self.size, self.entries.iter().map(|(_, m)| m)).expect("masks share the set's size")
    }
}

/// Thresholds for detecting new elements by set subtraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubtractParams {
    /// A candidate counts as new iff at most this fraction of it is already claimed.
    pub tau_new: f64,
    /// Retained masks smaller than this after clipping are discarded.
    pub min_area: u64,
}

impl Default for SubtractParams {
    fn default() -> Self {
        SubtractParams {
            tau_new: 0.5,
            min_area: 64,
        }
    }
}

/// Returns the candidates that are not already explained by `existing`,
/// each clipped against the existing coverage.
pub fn mask_set_subtract(candidates: &MaskSet, existing: &MaskSet, params: SubtractParams) -> Result<MaskSet> {
    candidates.size.check(existing.size)?;
    let claimed = existing.union();
    let mut kept = Vec::new();
    for (id, cand) in &candidates.entries {
        if cand.is_empty() {
            continue;
        }
        if coverage(cand, &claimed)? > params.tau_new {
            continue;
        }
        let clipped = combine(cand, &claimed, CombineMode::Subtract)?;
        if !clipped.is_empty() && clipped.area() >= params.min_area {
            kept.push((*id, clipped));
        }
    }
    Ok(MaskSet {
        frame_index: candidates.frame_index,
        size: candidates.size,
        entries: kept,
    })
}

/// Makes the set pairwise disjoint: contested pixels go to the smallest
/// claimant, ties to the lower element id. Entry order is preserved.
pub fn resolve_overlaps(set: &MaskSet) -> MaskSet {
    let mut order: Vec<usize> = (0..set.entries.len()).collect();
    order.sort_by_key(|&i| (set.entries[i].1.area(), set.entries[i].0));
    let mut resolved: Vec<Option<PixelMask>> = vec![None; set.entries.len()];
    let mut claimed = PixelMask::empty(set.size);
    for i in order {
        let mask = &set.entries[i].1;
        let own = combine(mask, &claimed, CombineMode::Subtract).expect("same size");
        claimed = combine(&claimed, mask, CombineMode::Union).expect("same size");
        resolved[i] = Some(own);
    }
    MaskSet {
        frame_index: set.frame_index,
        size: set.size,
        entries: set
            .entries
            .iter()
            .zip(resolved)
            .map(|((id, _), m)| (*id, m.expect("every entry resolved")))
            .collect(),
    }
}
