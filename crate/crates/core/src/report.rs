//! Aggregate statistics over written bundles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::latb::{self, Index};

/// What the report needs from one bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleStats {
    pub clip_id: String,
    /// Motion class per valid slot: `0` static, `1` dynamic.
    pub classes: Vec<u8>,
    /// Normalized score per valid slot.
    pub scores: Vec<f64>,
    pub tracks_total: u64,
    pub tracks_dropped: u64,
}

fn meta_u64(index: &Index, key: &str) -> Result<u64> {
    index
        .meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::corrupt("LATB", format!("clip {}: missing meta {key}", index.clip_id)))
}

impl BundleStats {
    /// Reads only the index and the per-slot arrays.
    pub fn read(path: &Path) -> Result<Self> {
        let index = latb::read_index(path)?;
        let get = |name: &str| {
            latb::read_array(path, &index, name)?
                .ok_or_else(|| Error::corrupt("LATB", format!("clip {}: missing array {name}", index.clip_id)))
        };
        let validity = get("validity")?.data;
        let classes = get("motion_class")?.data;
        let scores = get("scores")?
            .as_f32()
            .ok_or_else(|| Error::corrupt("LATB", "scores must be f32"))?;
        if classes.len() != validity.len() || scores.len() != validity.len() {
            return Err(Error::corrupt("LATB", format!("clip {}: per-slot arrays disagree", index.clip_id)));
        }
        let valid = |i: &usize| validity[*i] != 0;
        Ok(BundleStats {
            clip_id: index.clip_id.clone(),
            classes: (0..validity.len()).filter(valid).map(|i| classes[i]).collect(),
            scores: (0..validity.len()).filter(valid).map(|i| scores[i] as f64).collect(),
            tracks_total: meta_u64(&index, "tracks_total")?,
            tracks_dropped: meta_u64(&index, "tracks_dropped")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Counts of normalized scores in ten equal bins over `[0, 1]`.
    pub histogram: [u64; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub clips: usize,
    /// Layer count to number of clips.
    pub layer_histogram: BTreeMap<usize, usize>,
    pub static_layers: usize,
    pub dynamic_layers: usize,
    /// Static layers over all layers.
    pub static_ratio: f64,
    pub scores: ScoreSummary,
    pub tracks_total: u64,
    pub tracks_dropped: u64,
    pub dropped_track_fraction: f64,
}

pub fn stats(bundles: &[BundleStats]) -> Result<Report> {
    if bundles.is_empty() {
        return Err(Error::NoBundles);
    }
    let mut layer_histogram = BTreeMap::new();
    let (mut static_layers, mut dynamic_layers) = (0, 0);
    let mut histogram = [0u64; 10];
    let (mut min, mut max, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    let (mut tracks_total, mut tracks_dropped) = (0, 0);
    for b in bundles {
        *layer_histogram.entry(b.classes.len()).or_insert(0) += 1;
        static_layers += b.classes.iter().filter(|&&c| c == 0).count();
        dynamic_layers += b.classes.iter().filter(|&&c| c == 1).count();
        for &s in &b.scores {
            histogram[((s * 10.0) as usize).min(9)] += 1;
            min = min.min(s);
            max = max.max(s);
            sum += s;
            count += 1;
        }
        tracks_total += b.tracks_total;
        tracks_dropped += b.tracks_dropped;
    }
    let layers = static_layers + dynamic_layers;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(Report {
        clips: bundles.len(),
        layer_histogram,
        static_layers,
        dynamic_layers,
        static_ratio: ratio(static_layers as f64, layers as f64),
        scores: ScoreSummary {
            min: if count > 0 { min } else { 0.0 },
            max: if count > 0 { max } else { 0.0 },
            mean: ratio(sum, count as f64),
            histogram,
        },
        tracks_total,
        tracks_dropped,
        dropped_track_fraction: ratio(tracks_dropped as f64, tracks_total as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(classes: &[u8], scores: &[f64]) -> BundleStats {
        BundleStats {
            clip_id: "c".into(),
            classes: classes.to_vec(),
            scores: scores.to_vec(),
            tracks_total: 10,
            tracks_dropped: 3,
        }
    }

    #[test]
    fn single_bundle() {
        let r = stats(&[bundle(&[0, 1, 1], &[0.0, 0.5, 1.0])]).unwrap();
        assert_eq!(r.layer_histogram, BTreeMap::from([(3, 1)]));
        assert_eq!((r.static_layers, r.dynamic_layers), (1, 2));
        assert_eq!(r.scores.histogram[0], 1);
        assert_eq!(r.scores.histogram[5], 1);
        assert_eq!(r.scores.histogram[9], 1);
        assert_eq!(r.dropped_track_fraction, 0.3);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(stats(&[]), Err(Error::NoBundles)));
    }
}
